//! Link- and path-level delay models.
//!
//! These are the analytic counterparts of what the simulator produces: the
//! optimizer uses them as constraint left-hand sides, and tests compare them
//! against simulated traces. All functions are pure; fractional terms are
//! accumulated as exact rationals and rounded once at the microsecond grid.

use num_rational::Ratio;
use thiserror::Error;

use crate::model::{BundlingPlan, NodeId, Topology};
use crate::time::{round_ratio_half_up, Micros};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DelayError {
    #[error("node {0} is not part of the topology")]
    UnknownNode(NodeId),
    #[error("plan has no bundling number for node {0}")]
    IncompletePlan(NodeId),
}

/// Per-hop transmission service-time parameters.
///
/// Defaults sum to 10 ms for the no-retry path; the individual splits are
/// configuration, not measured truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ServiceDelayParams {
    /// One-time SPI bus loading delay.
    pub spi: Micros,
    /// MAC-layer access delay.
    pub mac: Micros,
    /// Frame transmission delay.
    pub frame: Micros,
    /// Acknowledgment transmission delay.
    pub ack: Micros,
    /// Acknowledgment wait timeout.
    pub ack_wait: Micros,
    /// Backoff before a retransmission attempt.
    pub retry_backoff: Micros,
    /// Maximum transmission attempts.
    pub max_attempts: u32,
}

impl Default for ServiceDelayParams {
    fn default() -> Self {
        ServiceDelayParams {
            spi: Micros::from_millis(1),
            mac: Micros::from_millis(4),
            frame: Micros::from_millis(4),
            ack: Micros::from_millis(1),
            ack_wait: Micros::from_millis(2),
            retry_backoff: Micros::from_millis(5),
            max_attempts: 5,
        }
    }
}

/// Full service-time model with retries.
///
/// `attempts` is the number of transmissions needed for a successful
/// delivery; past `max_attempts` the delivery fails and the failure branch
/// applies.
pub fn service_delay_full(p: &ServiceDelayParams, attempts: u32) -> Micros {
    assert!(attempts >= 1, "attempts must be at least 1");
    let retry = p.retry_backoff + p.frame + p.ack_wait;
    if attempts <= p.max_attempts {
        let success = p.mac + p.frame + p.ack;
        p.spi + success + retry.scale((attempts - 1) as u64, 1)
    } else {
        let failure = p.mac + p.frame + p.ack_wait;
        p.spi + failure + retry.scale((p.max_attempts - 1) as u64, 1)
    }
}

/// Retry-free service time; equals [`service_delay_full`] at one attempt.
pub fn service_delay_simplified(p: &ServiceDelayParams) -> Micros {
    p.spi + p.mac + p.frame + p.ack
}

/// Delay contributed by filling a bundle of `bundling` entries at a node
/// merging `1 + offspring` unit-rate measurement streams.
pub fn bundling_delay(bundling: u32, offspring: u32, interval: Micros) -> Micros {
    assert!(bundling >= 1, "bundling number must be at least 1");
    assert!(!interval.is_zero(), "interval must be positive");
    interval.scale(bundling as u64, 1 + offspring as u64)
}

/// Whether the per-hop service term is included or dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayMode {
    /// Propagation + service + bundling.
    Exact,
    /// Bundling only — valid when the measurement interval dwarfs the
    /// service time.
    Approximate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkDelayBreakdown {
    pub propagation: Micros,
    pub service: Micros,
    pub bundling: Micros,
    pub total: Micros,
}

/// Single-link delay from its three components.
pub fn link_delay(
    propagation: Micros,
    service: Micros,
    bundling: Micros,
    mode: DelayMode,
) -> LinkDelayBreakdown {
    let total = match mode {
        DelayMode::Exact => propagation + service + bundling,
        DelayMode::Approximate => bundling,
    };
    LinkDelayBreakdown {
        propagation,
        service,
        bundling,
        total,
    }
}

/// Path-level end-to-end delay model for measurements originating at `node`.
///
/// Sums the bundling delay of the transmitting node of each hop along the
/// root path, plus (exact mode) one service time per hop. The rational sum
/// is rounded once at the end.
pub fn e2e_delay_model(
    node: NodeId,
    plan: &BundlingPlan,
    topology: &Topology,
    interval: Micros,
    mode: DelayMode,
    service: &ServiceDelayParams,
) -> Result<Micros, DelayError> {
    let path = topology
        .path(node)
        .map_err(|_| DelayError::UnknownNode(node))?;
    let mut total: Ratio<i128> = Ratio::new(0, 1);
    for &hop in path {
        let bundling = plan.get(hop).ok_or(DelayError::IncompletePlan(hop))?;
        let streams = 1 + topology.offspring_count(hop).unwrap() as i128;
        total += Ratio::new(bundling as i128 * interval.as_micros() as i128, streams);
    }
    if mode == DelayMode::Exact {
        let per_hop = service_delay_simplified(service).as_micros() as i128;
        total += Ratio::new(per_hop * path.len() as i128, 1);
    }
    Ok(Micros(round_ratio_half_up(total)))
}
