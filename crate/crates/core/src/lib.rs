//! NAS timer sizing for LEO satellite paths, and a discrete-event stress
//! simulator of 5G NAS registration to evaluate the sized timers.
//!
//! - [`timer_model`]: closed-form watchdog/backoff sizing over a node path.
//! - [`topology`]: constellation snapshots and route extraction.
//! - [`nas_sim`]: registration call flow between many UEs and one AMF.
//! - [`metrics`]: CDFs, expired-timer ratios and artifact writers.
//! - [`grid`]: scenario sweeps over UE count, loss and timer mode.

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod grid;
pub mod metrics;
pub mod nas_sim;
pub mod timer_model;
pub mod topology;

pub use nas_sim::{run_scenario, RunTrace, SimConfig};
pub use timer_model::{
    size_registration_suite, size_timer, EndpointWeights, NodeLoadProfile, PathSpec,
    SizedTimerSuite,
};
pub use topology::ConstellationSnapshot;
