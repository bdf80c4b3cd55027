//! Strip-based microscopic traffic simulation for mixed, lane-less traffic.
//!
//! A road network is cut into longitudinal strips; each vehicle occupies
//! the strips its width covers. Wide strips behave like lanes, narrow
//! strips give near-continuous lateral freedom. Vehicles follow their
//! leaders with Newtonian, Gipps or hybrid rules, change strips with a
//! straightforward, gap-acceptance or GHR-triggered model, and the run is
//! summarized with link speed, waiting time, flow and vehicle speed.

// `!(x > 0.0)` rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "cli")]
pub mod batch;
pub mod carfollow;
pub mod config;
pub mod engine;
pub mod fleet;
pub mod lanechange;
pub mod metrics;
pub mod network;
#[cfg(feature = "cli")]
pub mod report;
pub mod rng;
pub mod stats;
pub mod topologies;
