//! Discrete-event simulation core.

mod engine;
mod phy;
mod queue;
mod trace;

pub use engine::{
    resolve_flows, run, run_on, sample_placement, SimError, Simulator, DISCOVERY_ATTEMPTS, INTERFERENCE_WINDOW,
    REROUTE_BUDGET, REROUTE_BUDGET_WINDOW, ROUTE_EXPIRY,
};
pub use phy::{
    account_energy, adapt_power, adjudicate_reception, reroute_check, PowerChoice, PowerTarget, Reception,
    RerouteDecision, Transmission, POWER_FLOOR_FRACTION, REROUTE_MIN_FAILURES, REROUTE_WINDOW,
};
pub use queue::EventQueue;
pub use trace::{
    FrameKind, LossReason, SimulationTrace, TraceError, TraceEvent, TraceHeader, TraceRecord, TRACE_FORMAT_VERSION,
};
