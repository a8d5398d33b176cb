//! Run products: delay samples, message tallies, energy accounting, plan
//! history, and their CSV forms.
//!
//! CSV output is built with integer formatting only, so identical runs
//! produce byte-identical files.

use std::collections::BTreeMap;

use crate::model::{BundlingPlan, EnergyCounts, EnergyParams, NodeId};
use crate::sim::BundlingMode;
use crate::time::{fmt_secs, Micros, SimTime};

/// One end-to-end delay sample as stored in `delays.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DelayRecord {
    pub arrival: SimTime,
    pub origin: NodeId,
    pub e2e: Micros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Rx,
    Tx,
}

/// One data-plane radio event. Control beacons are not counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MessageEvent {
    pub at: SimTime,
    pub node: NodeId,
    pub direction: Direction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BundleLogEntry {
    pub at: SimTime,
    pub sender: NodeId,
    pub count: u16,
    pub bundling: u32,
}

/// Everything a simulation run produces.
#[derive(Clone, Debug)]
pub struct TraceSet {
    /// Delay samples ordered by arrival time.
    pub delays: Vec<DelayRecord>,
    pub message_events: Vec<MessageEvent>,
    pub energy_counts: BTreeMap<NodeId, EnergyCounts>,
    pub energy_params: EnergyParams,
    pub bundling_mode: BundlingMode,
    /// Plans disseminated over the run, in dissemination order.
    pub plan_history: Vec<(SimTime, BundlingPlan)>,
    /// Translation-error scores per ingested sync sample.
    pub sync_scores: Vec<(SimTime, NodeId, Micros)>,
    /// Per-origin sequence numbers in head arrival order.
    pub delivered_seqs: BTreeMap<NodeId, Vec<u16>>,
    /// One row per transmitted bundle: when, who, how many entries, and the
    /// bundling number in force at the trigger instant.
    pub bundle_log: Vec<BundleLogEntry>,
    /// Entries that arrived before their origin had a skew estimate.
    pub skipped_entries: u64,
    /// Re-optimization attempts that failed, with reasons.
    pub infeasible_events: Vec<(SimTime, String)>,
    /// Per node: (own entries sent, offspring entries carried).
    pub logical_entries: BTreeMap<NodeId, (u64, u64)>,
    pub duration: Micros,
    /// Sensor nodes, ascending.
    pub nodes: Vec<NodeId>,
}

impl TraceSet {
    pub fn new(
        nodes: Vec<NodeId>,
        energy_params: EnergyParams,
        bundling_mode: BundlingMode,
        duration: Micros,
    ) -> Self {
        TraceSet {
            delays: Vec::new(),
            message_events: Vec::new(),
            energy_counts: BTreeMap::new(),
            energy_params,
            bundling_mode,
            plan_history: Vec::new(),
            sync_scores: Vec::new(),
            delivered_seqs: BTreeMap::new(),
            bundle_log: Vec::new(),
            skipped_entries: 0,
            infeasible_events: Vec::new(),
            logical_entries: BTreeMap::new(),
            duration,
            nodes,
        }
    }

    pub(crate) fn record_tx(&mut self, at: SimTime, node: NodeId) {
        self.message_events.push(MessageEvent {
            at,
            node,
            direction: Direction::Tx,
        });
    }

    pub(crate) fn record_rx(&mut self, at: SimTime, node: NodeId) {
        self.message_events.push(MessageEvent {
            at,
            node,
            direction: Direction::Rx,
        });
    }
}

/// Tumbling-window reception + transmission tallies per sensor node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowCount {
    pub window_start: SimTime,
    pub node: NodeId,
    pub rx: u64,
    pub tx: u64,
}

pub fn message_counts(trace: &TraceSet, window: Micros) -> Vec<WindowCount> {
    assert!(!window.is_zero(), "window must be positive");
    let w = window.as_micros();
    let windows = trace.duration.as_micros().div_ceil(w);
    let mut acc: BTreeMap<(u64, NodeId), (u64, u64)> = BTreeMap::new();
    for i in 0..windows {
        for &node in &trace.nodes {
            acc.insert((i * w, node), (0, 0));
        }
    }
    for ev in &trace.message_events {
        let start = ev.at.as_micros() / w * w;
        let slot = acc.entry((start, ev.node)).or_insert((0, 0));
        match ev.direction {
            Direction::Rx => slot.0 += 1,
            Direction::Tx => slot.1 += 1,
        }
    }
    acc.into_iter()
        .map(|((start, node), (rx, tx))| WindowCount {
            window_start: SimTime(start),
            node,
            rx,
            tx,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnergyTally {
    pub per_node: BTreeMap<NodeId, u64>,
    pub total: u64,
}

/// Apply the per-mode energy model to raw transmission counters.
///
/// Without bundling each counter class pays its own price; with all-data
/// bundling only bundle transmissions cost anything; self-data bundling
/// additionally pays for forwarded offspring messages.
pub fn energy_tally(
    counts: &BTreeMap<NodeId, EnergyCounts>,
    params: &EnergyParams,
    mode: BundlingMode,
) -> EnergyTally {
    let mut per_node = BTreeMap::new();
    let mut total: u64 = 0;
    for (&node, c) in counts {
        let e = match mode {
            BundlingMode::NoBundling => {
                c.measurements * params.measurement + c.syncs * params.sync + c.forwards * params.forward
            }
            BundlingMode::AllData => c.bundles * params.bundle,
            BundlingMode::SelfData => c.bundles * params.bundle + c.forwards * params.forward,
        };
        per_node.insert(node, e);
        total += e;
    }
    EnergyTally { per_node, total }
}

pub fn delays_csv(trace: &TraceSet) -> String {
    let mut out = String::from("arrival_s,origin,e2e_s\n");
    for d in &trace.delays {
        out.push_str(&format!(
            "{},{},{}\n",
            d.arrival,
            d.origin,
            fmt_secs(d.e2e.as_micros())
        ));
    }
    out
}

pub fn messages_csv(trace: &TraceSet, window: Micros) -> String {
    let mut out = String::from("window_start_s,node,rx,tx\n");
    for c in message_counts(trace, window) {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.window_start, c.node, c.rx, c.tx
        ));
    }
    out
}

pub fn energy_csv(trace: &TraceSet) -> String {
    let tally = energy_tally(&trace.energy_counts, &trace.energy_params, trace.bundling_mode);
    let mut out = String::from("node,alpha,beta,gamma_fwd,delta,energy_units\n");
    for (node, c) in &trace.energy_counts {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            node, c.measurements, c.syncs, c.forwards, c.bundles, tally.per_node[node]
        ));
    }
    out
}

pub fn plan_history_csv(trace: &TraceSet) -> String {
    let mut out = String::from("time_s,node,gamma\n");
    for (at, plan) in &trace.plan_history {
        for (node, bundling) in plan.iter() {
            out.push_str(&format!("{},{},{}\n", at, node, bundling));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(id: u16) -> NodeId {
        NodeId(id)
    }

    #[test]
    fn window_counts_tumble() {
        let mut trace = TraceSet::new(
            vec![n(1), n(2)],
            EnergyParams {
                measurement: 1,
                sync: 1,
                forward: 1,
                bundle: 1,
            },
            BundlingMode::AllData,
            Micros::from_secs(30),
        );
        trace.record_tx(SimTime(1_000_000), n(1));
        trace.record_tx(SimTime(9_999_999), n(1));
        trace.record_rx(SimTime(10_000_000), n(1));
        trace.record_tx(SimTime(25_000_000), n(2));
        let counts = message_counts(&trace, Micros::from_secs(10));
        assert_eq!(counts.len(), 6); // 3 windows x 2 nodes
        let find = |start: u64, node: u16| {
            counts
                .iter()
                .find(|c| c.window_start == SimTime(start) && c.node == n(node))
                .copied()
                .unwrap()
        };
        assert_eq!((find(0, 1).rx, find(0, 1).tx), (0, 2));
        assert_eq!((find(10_000_000, 1).rx, find(10_000_000, 1).tx), (1, 0));
        assert_eq!((find(20_000_000, 2).rx, find(20_000_000, 2).tx), (0, 1));
        // idle node stays all zeros
        assert_eq!((find(20_000_000, 1).rx, find(20_000_000, 1).tx), (0, 0));
    }

    #[test]
    fn energy_models() {
        let params = EnergyParams {
            measurement: 2,
            sync: 3,
            forward: 5,
            bundle: 7,
        };
        let mut counts = BTreeMap::new();
        counts.insert(
            n(1),
            EnergyCounts {
                measurements: 10,
                syncs: 0,
                forwards: 4,
                bundles: 3,
            },
        );
        let none = energy_tally(&counts, &params, BundlingMode::NoBundling);
        assert_eq!(none.total, 10 * 2 + 4 * 5);
        let all = energy_tally(&counts, &params, BundlingMode::AllData);
        assert_eq!(all.total, 3 * 7);
        let own = energy_tally(&counts, &params, BundlingMode::SelfData);
        assert_eq!(own.total, 3 * 7 + 4 * 5);
    }

    #[test]
    fn csv_headers() {
        let trace = TraceSet::new(
            vec![n(1)],
            EnergyParams {
                measurement: 1,
                sync: 1,
                forward: 1,
                bundle: 1,
            },
            BundlingMode::AllData,
            Micros::from_secs(1),
        );
        assert!(delays_csv(&trace).starts_with("arrival_s,origin,e2e_s\n"));
        assert!(messages_csv(&trace, Micros::from_secs(10))
            .starts_with("window_start_s,node,rx,tx\n"));
        assert!(energy_csv(&trace).starts_with("node,alpha,beta,gamma_fwd,delta,energy_units\n"));
        assert!(plan_history_csv(&trace).starts_with("time_s,node,gamma\n"));
    }
}
