//! Heavy-traffic control of the criss-cross queueing network.
//!
//! The crate covers the limiting workload control problem (solved on a grid to
//! obtain the free boundary `psi`), Monte-Carlo simulation of the optimally
//! reflected workload, a discrete-event simulator of the pre-limit network
//! under the threshold policy, and the large-deviation constants used to pick
//! the policy thresholds.

mod linalg;

pub mod distributions;
pub mod experiment;
pub mod free_boundary;
pub mod model;
pub mod network;
pub mod param_select;
pub mod rbm;
pub mod skorohod;

pub use free_boundary::{
    extract_boundary, hjb_residual, solve_value, FreeBoundary, GridSpec, SolveOptions, ValueGrid,
};
pub use model::{
    brownian_data, classify_regime, lp_optimizer, lp_value, BrownianData, NetworkParams, Regime,
};
pub use skorohod::{gamma, reflect_in_g, regulator, DiscretePath};
