//! Shared domain types: tree topology, requirement sets, bundling plans and
//! energy bookkeeping.
//!
//! The network is a tree of sensor nodes rooted at the head (node 0). All
//! derived quantities the rest of the crate needs — children, offspring
//! counts, root paths — are computed once at validation time and are
//! immutable afterwards, so a [`Topology`] can be shared freely.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Micros;

/// Node identifier. Dense small integers; 0 is reserved for the head.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u16);

/// The head (root) node.
pub const HEAD: NodeId = NodeId(0);

impl NodeId {
    pub fn is_head(self) -> bool {
        self == HEAD
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("no edge attaches to the head (node 0)")]
    MissingHead,
    #[error("head node 0 cannot have a parent")]
    HeadHasParent,
    #[error("cycle detected through node {0}")]
    CycleDetected(NodeId),
    #[error("node {0} has multiple parents")]
    MultipleParents(NodeId),
    #[error("node {0} is not connected to the head")]
    DisconnectedNode(NodeId),
    #[error("node {0} is not part of the topology")]
    UnknownNode(NodeId),
}

/// Validated tree rooted at the head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    parents: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    offspring: BTreeMap<NodeId, u32>,
    paths: BTreeMap<NodeId, Vec<NodeId>>,
}

/// Build and validate a topology from `(child, parent)` edges.
///
/// Checks, in order: non-empty input, head reachability, head not a child,
/// cycles, duplicate parents, connectivity. Each error names the offending
/// node.
pub fn validate_topology(edges: &[(NodeId, NodeId)]) -> Result<Topology, TopologyError> {
    if edges.is_empty() {
        return Err(TopologyError::EmptyEdgeList);
    }
    if !edges.iter().any(|&(_, p)| p == HEAD) {
        return Err(TopologyError::MissingHead);
    }
    if edges.iter().any(|&(c, _)| c == HEAD) {
        return Err(TopologyError::HeadHasParent);
    }

    // Multigraph adjacency child -> parents; cycle detection runs on this
    // before the single-parent check so that an edge pair like (1,2),(2,1)
    // reports the cycle rather than the duplicate parent.
    let mut parent_sets: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(child, parent) in edges {
        parent_sets.entry(child).or_default().push(parent);
    }

    if let Some(node) = find_cycle(&parent_sets) {
        return Err(TopologyError::CycleDetected(node));
    }

    let mut parents = BTreeMap::new();
    for (&child, ps) in &parent_sets {
        let distinct: BTreeSet<NodeId> = ps.iter().copied().collect();
        if distinct.len() > 1 {
            return Err(TopologyError::MultipleParents(child));
        }
        parents.insert(child, ps[0]);
    }

    // Every parent chain must terminate at the head.
    for &node in parents.keys() {
        let mut cur = node;
        loop {
            let p = parents[&cur];
            if p == HEAD {
                break;
            }
            if !parents.contains_key(&p) {
                return Err(TopologyError::DisconnectedNode(p));
            }
            cur = p;
        }
    }

    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    children.insert(HEAD, Vec::new());
    for &c in parents.keys() {
        children.entry(c).or_default();
    }
    for (&c, &p) in &parents {
        children.entry(p).or_default().push(c);
    }
    for kids in children.values_mut() {
        kids.sort();
    }

    let mut offspring: BTreeMap<NodeId, u32> = BTreeMap::new();
    for &node in parents.keys() {
        offspring.insert(node, count_descendants(node, &children));
    }

    let mut paths = BTreeMap::new();
    for &node in parents.keys() {
        let mut path = vec![node];
        let mut cur = node;
        while parents[&cur] != HEAD {
            cur = parents[&cur];
            path.push(cur);
        }
        paths.insert(node, path);
    }

    Ok(Topology {
        parents,
        children,
        offspring,
        paths,
    })
}

fn find_cycle(parent_sets: &BTreeMap<NodeId, Vec<NodeId>>) -> Option<NodeId> {
    // Iterative DFS over the child -> parent multigraph.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        Active,
        Done,
    }
    let mut marks: BTreeMap<NodeId, Mark> =
        parent_sets.keys().map(|&n| (n, Mark::Unseen)).collect();

    for &start in parent_sets.keys() {
        if marks[&start] != Mark::Unseen {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        marks.insert(start, Mark::Active);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let ps = &parent_sets[&node];
            if *next < ps.len() {
                let p = ps[*next];
                *next += 1;
                if p == HEAD || !parent_sets.contains_key(&p) {
                    continue;
                }
                match marks[&p] {
                    Mark::Active => return Some(p),
                    Mark::Unseen => {
                        marks.insert(p, Mark::Active);
                        stack.push((p, 0));
                    }
                    Mark::Done => {}
                }
            } else {
                marks.insert(node, Mark::Done);
                stack.pop();
            }
        }
    }
    None
}

fn count_descendants(node: NodeId, children: &BTreeMap<NodeId, Vec<NodeId>>) -> u32 {
    let mut count = 0;
    let mut stack: Vec<NodeId> = children[&node].clone();
    while let Some(n) = stack.pop() {
        count += 1;
        stack.extend(children[&n].iter().copied());
    }
    count
}

impl Topology {
    /// Sensor node ids in ascending order (head excluded).
    pub fn sensors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.parents.keys().copied()
    }

    pub fn sensor_count(&self) -> usize {
        self.parents.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.parents.contains_key(&node)
    }

    pub fn parent(&self, node: NodeId) -> Result<NodeId, TopologyError> {
        self.parents
            .get(&node)
            .copied()
            .ok_or(TopologyError::UnknownNode(node))
    }

    /// Direct children of `node` (the head is a valid argument).
    pub fn children(&self, node: NodeId) -> &[NodeId] {
        self.children.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of sensor nodes in the subtree strictly below `node`.
    ///
    /// This counts all descendants, not just direct children: it is the
    /// number of upstream measurement streams merged at `node`, in addition
    /// to the node's own.
    pub fn offspring_count(&self, node: NodeId) -> Result<u32, TopologyError> {
        self.offspring
            .get(&node)
            .copied()
            .ok_or(TopologyError::UnknownNode(node))
    }

    /// Nodes traversed from `node` to the head, starting with `node`,
    /// excluding the head.
    pub fn path(&self, node: NodeId) -> Result<&[NodeId], TopologyError> {
        self.paths
            .get(&node)
            .map(Vec::as_slice)
            .ok_or(TopologyError::UnknownNode(node))
    }

    /// Hop distance from `node` to the head.
    pub fn depth(&self, node: NodeId) -> Result<u32, TopologyError> {
        Ok(self.path(node)?.len() as u32)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.parents.iter().map(|(&c, &p)| (c, p))
    }
}

/// User-facing performance requirements plus bundling bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct RequirementSet {
    /// Upper bound on end-to-end delay.
    pub max_delay: Micros,
    /// Required synchronization accuracy (largest tolerable translation
    /// error), in seconds. Held as a float because tabulated accuracies span
    /// many orders of magnitude below the microsecond grid.
    pub max_sync_error_secs: f64,
    /// Inclusive bundling-number bounds.
    pub bundle_min: u32,
    pub bundle_max: u32,
    /// Measurement interval common to all sensor nodes.
    pub measurement_interval: Micros,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RequirementError {
    #[error("bundle_min must be at least 1")]
    BundleMinZero,
    #[error("bundle_min {0} exceeds bundle_max {1}")]
    BundleBoundsInverted(u32, u32),
    #[error("max_delay must be positive")]
    NonPositiveDelayBound,
    #[error("measurement interval must be positive")]
    NonPositiveInterval,
}

impl RequirementSet {
    pub fn validate(&self) -> Result<(), RequirementError> {
        if self.bundle_min < 1 {
            return Err(RequirementError::BundleMinZero);
        }
        if self.bundle_min > self.bundle_max {
            return Err(RequirementError::BundleBoundsInverted(
                self.bundle_min,
                self.bundle_max,
            ));
        }
        if self.max_delay.is_zero() {
            return Err(RequirementError::NonPositiveDelayBound);
        }
        if self.measurement_interval.is_zero() {
            return Err(RequirementError::NonPositiveInterval);
        }
        Ok(())
    }
}

/// Per-node bundling numbers — the optimizer's decision vector.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BundlingPlan {
    values: BTreeMap<NodeId, u32>,
}

impl BundlingPlan {
    pub fn new() -> Self {
        Self::default()
    }

    /// Same bundling number for every sensor node of `topology`.
    pub fn uniform(topology: &Topology, value: u32) -> Self {
        BundlingPlan {
            values: topology.sensors().map(|n| (n, value)).collect(),
        }
    }

    pub fn set(&mut self, node: NodeId, value: u32) {
        self.values.insert(node, value);
    }

    pub fn get(&self, node: NodeId) -> Option<u32> {
        self.values.get(&node).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.values.iter().map(|(&n, &v)| (n, v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total bundling number (the optimization objective).
    pub fn objective(&self) -> u64 {
        self.values.values().map(|&v| v as u64).sum()
    }

    /// First node of `topology` missing from the plan, if any.
    pub fn missing_node(&self, topology: &Topology) -> Option<NodeId> {
        topology.sensors().find(|n| !self.values.contains_key(n))
    }
}

impl fmt::Display for BundlingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (node, value) in &self.values {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{}:{}", node, value)?;
            first = false;
        }
        Ok(())
    }
}

/// Per-transmission energy costs, dimensionless units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Transmitting one of the node's own measurement messages.
    pub measurement: u64,
    /// Transmitting a standalone synchronization message.
    pub sync: u64,
    /// Forwarding a message that originated below this node.
    pub forward: u64,
    /// Transmitting one bundled message.
    pub bundle: u64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            measurement: 1,
            sync: 1,
            forward: 1,
            bundle: 1,
        }
    }
}

/// Transmission counters accumulated by a node during a run.
///
/// CSV output keeps the conventional column names alpha/beta/gamma_fwd/delta
/// for these four counters, in this order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyCounts {
    /// Own-measurement messages sent (alpha).
    pub measurements: u64,
    /// Standalone sync messages sent (beta).
    pub syncs: u64,
    /// Messages forwarded for offspring nodes (gamma_fwd).
    pub forwards: u64,
    /// Bundled messages sent (delta).
    pub bundles: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(id: u16) -> NodeId {
        NodeId(id)
    }

    fn demo_edges() -> Vec<(NodeId, NodeId)> {
        vec![(n(1), n(0)), (n(2), n(1)), (n(3), n(1)), (n(4), n(2))]
    }

    #[test]
    fn demo_topology_paths_and_offspring() {
        let topo = validate_topology(&demo_edges()).unwrap();
        assert_eq!(topo.path(n(4)).unwrap(), &[n(4), n(2), n(1)]);
        assert_eq!(topo.path(n(3)).unwrap(), &[n(3), n(1)]);
        assert_eq!(topo.offspring_count(n(1)).unwrap(), 3);
        assert_eq!(topo.offspring_count(n(2)).unwrap(), 1);
        assert_eq!(topo.offspring_count(n(3)).unwrap(), 0);
        assert_eq!(topo.offspring_count(n(4)).unwrap(), 0);
        assert_eq!(topo.depth(n(4)).unwrap(), 3);
    }

    #[test]
    fn single_node_chain() {
        let topo = validate_topology(&[(n(1), n(0))]).unwrap();
        assert_eq!(topo.path(n(1)).unwrap(), &[n(1)]);
        assert_eq!(topo.offspring_count(n(1)).unwrap(), 0);
        assert_eq!(topo.sensor_count(), 1);
    }

    #[test]
    fn explicit_cycle_detected() {
        let err = validate_topology(&[(n(1), n(0)), (n(2), n(1)), (n(1), n(2))]).unwrap_err();
        assert!(matches!(err, TopologyError::CycleDetected(_)));
    }

    #[test]
    fn multiple_parents_detected() {
        let err = validate_topology(&[(n(1), n(0)), (n(2), n(1)), (n(2), n(0))]).unwrap_err();
        assert_eq!(err, TopologyError::MultipleParents(n(2)));
    }

    #[test]
    fn dangling_parent_detected() {
        let err = validate_topology(&[(n(1), n(0)), (n(3), n(2))]).unwrap_err();
        assert_eq!(err, TopologyError::DisconnectedNode(n(2)));
    }

    #[test]
    fn missing_head_detected() {
        let err = validate_topology(&[(n(2), n(1))]).unwrap_err();
        assert_eq!(err, TopologyError::MissingHead);
    }

    #[test]
    fn head_cannot_be_child() {
        let err = validate_topology(&[(n(1), n(0)), (n(0), n(1))]).unwrap_err();
        assert_eq!(err, TopologyError::HeadHasParent);
    }

    #[test]
    fn empty_edges_rejected() {
        assert_eq!(
            validate_topology(&[]).unwrap_err(),
            TopologyError::EmptyEdgeList
        );
    }

    #[test]
    fn stream_count_identity() {
        // 1 + offspring(i) = number of measurement streams through i, and the
        // head's children account for every sensor node.
        let topo = validate_topology(&demo_edges()).unwrap();
        for node in topo.sensors() {
            let streams = 1 + topo.offspring_count(node).unwrap();
            let below: u32 = topo
                .sensors()
                .filter(|&m| topo.path(m).unwrap().contains(&node))
                .count() as u32;
            assert_eq!(streams, below);
        }
        let via_head: u32 = topo
            .children(HEAD)
            .iter()
            .map(|&c| 1 + topo.offspring_count(c).unwrap())
            .sum();
        assert_eq!(via_head, topo.sensor_count() as u32);
    }

    #[test]
    fn path_length_is_hop_distance() {
        let topo = validate_topology(&demo_edges()).unwrap();
        for node in topo.sensors() {
            let mut hops = 0;
            let mut cur = node;
            while cur != HEAD {
                cur = topo.parent(cur).unwrap();
                hops += 1;
            }
            assert_eq!(topo.path(node).unwrap().len(), hops);
        }
    }

    #[test]
    fn requirement_validation() {
        let mut req = RequirementSet {
            max_delay: Micros::from_secs(8),
            max_sync_error_secs: 5e-6,
            bundle_min: 1,
            bundle_max: 15,
            measurement_interval: Micros::from_secs(1),
        };
        assert!(req.validate().is_ok());
        req.bundle_min = 0;
        assert_eq!(req.validate().unwrap_err(), RequirementError::BundleMinZero);
        req.bundle_min = 20;
        assert!(matches!(
            req.validate().unwrap_err(),
            RequirementError::BundleBoundsInverted(20, 15)
        ));
    }
}
