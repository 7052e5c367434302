//! Discrete-event simulation of the pre-limit criss-cross network.

pub mod diagnostics;
pub mod policy;
pub mod rates;
pub mod sim;

pub use diagnostics::{diagnostics, scaled_processes, DiagnosticReport, ScaledPaths};
pub use policy::{decide_server1, Action, Branch, PolicyContext, PolicyThresholds, PolicyVariant};
pub use rates::NetworkRates;
pub use sim::{run_network, run_replications, SimConfig, SimError, SimState};
