//! Deterministic discrete-event simulation of interference-aware routing in
//! wireless ad hoc networks.

pub mod config;
pub mod info;
pub mod metrics;
pub mod radio;
pub mod routing;
pub mod sim;
pub mod sweep;
