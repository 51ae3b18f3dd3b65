//! Class-based bandwidth over-reservation with pre-built aggregated
//! multicast trees, and a discrete-event simulator comparing it with
//! per-flow edge-to-edge signaling.

pub mod agtree;
pub mod asac;
pub mod engine;
pub mod mirap;
pub mod report;
pub mod scenario;
pub mod topology;
pub mod units;
pub mod workload;
