//! Bundling-number planning and simulation for hierarchical sensor networks.
//!
//! A network of battery-powered sensor nodes reports periodic measurements
//! up a tree to a head node. Nodes bundle several measurements into one
//! radio message to save transmissions, which stretches end-to-end delay
//! and — because synchronization timestamps ride the same messages —
//! degrades time-synchronization accuracy. This crate computes, for every
//! node, the largest bundling number that still honors user bounds on both
//! metrics, and ships a deterministic discrete-event simulator that
//! validates those plans against simulated network behavior.
//!
//! Modules:
//! - [`model`] — topology, requirements, plans, energy bookkeeping
//! - [`delay`] — analytic link/path delay models
//! - [`sync`] — accuracy tables, clock model, skew estimation
//! - [`optimizer`] — constraint generation and the exact integer solver
//! - [`wire`] — bundled-message binary codec
//! - [`head`] — the head node's runtime control loop
//! - [`sim`] — the discrete-event simulator and trace exports
//! - [`scenario`] — scenario-file schema and validation

pub mod delay;
pub mod head;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod sync;
pub mod time;
pub mod wire;

pub use model::{validate_topology, BundlingPlan, NodeId, RequirementSet, Topology, HEAD};
pub use time::{Micros, SimTime};
