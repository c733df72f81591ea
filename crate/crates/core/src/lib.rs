//! Desk-scale safety-assurance harness for an emergent-behaviour robot swarm.
//!
//! The harness simulates a cloakroom logistics scenario (agents ferry boxes
//! from deposit zones to delivery zones among humans), injects communication
//! and motor faults into configurable fractions of the swarm, checks a
//! catalog of machine-readable safety requirements against simulation traces
//! with runtime monitors, and assembles the resulting evidence into a
//! six-stage assurance case with end-to-end traceability.
//!
//! Module map:
//!
//! - [`sim`] — deterministic discrete-time 2D world: kinematics, collisions,
//!   local sensing, range-limited communication.
//! - [`behavior`] — the per-agent finite-state controller whose collective
//!   execution yields collect/transport/deliver behaviour, with speed caps
//!   near humans baked in.
//! - [`fault`] — fault models (full-communication, half-of-wheels motor)
//!   applied to seeded fractions of the swarm.
//! - [`monitors`] — runtime-verification engine evaluating the requirement
//!   catalog over traces, producing verdicts with evidence.
//! - [`campaign`] — test-matrix generation, batch execution, degradation
//!   pairing, evaluation validation, deployment scenarios.
//! - [`artefacts`] — typed artefact registry and assurance-argument
//!   instantiation over the generated evidence.

pub mod artefacts;
pub mod behavior;
pub mod campaign;
pub mod config;
pub mod fault;
pub mod geom;
pub mod monitors;
pub mod runner;
pub mod sim;
pub mod trace;
pub mod util;

/// Version stamp written into log headers and run manifests.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
