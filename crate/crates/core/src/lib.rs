//! Energy-efficient joint unicast and multicast beamforming for multi-cell
//! multi-user MIMO downlink.
//!
//! Every base station sends one common (multicast) stream per served group and
//! up to `M_k - 1` private (unicast) streams to each multi-antenna user. The
//! network energy efficiency (sum rate over consumed power) is maximized by
//! alternating MMSE receiver updates with successive convex approximation of a
//! Charnes-Cooper scaled conic subproblem.
//!
//! Module map:
//! - [`scenario`]: topology, power model, radio parameters, Rayleigh channels.
//! - [`metrics`]: exact interference, SINR, MSE, rates, power and EE.
//! - [`mmse`]: closed-form MMSE receive beamformers.
//! - [`conic`]: real conic program IR (linear, SOC, exponential cone) and solver backend.
//! - [`sca`]: the alternating SCA optimizer.
//! - [`experiment`]: Monte Carlo experiment harness behind the `beamform-ee` CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conic;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod mmse;
pub mod scenario;
pub mod sca;

pub use error::{Error, Result};
pub use exec::Execution;
pub use metrics::{BeamformerSet, RateReport, ReceiverSet};
pub use scenario::{ChannelSet, PowerModel, RadioConfig, Scenario, ScenarioConfig, Topology};
pub use sca::{IterateState, Mode, SolverOptions, TangentUpdate};

