//! Performance estimation for shared-bus SoC interconnects.
//!
//! Each processing element (PE) is a small automaton that alternates between
//! computing (`CP`), accessing memory (`AC`) and waiting for the bus, either
//! for a full connection time of a competing winner (`FW`) or for the residual
//! time of an access already in flight (`RW`). The automata interact only
//! through the bus arbiter, and together they form a stochastic automata
//! network whose steady state yields bandwidth, queue length and waiting time.
//!
//! Two architectures are supported: a single shared bus (SSB) and a
//! hierarchical pair of buses joined by a bridge (HBB), where a PE issues local
//! requests on its home bus or global requests that need both buses.
//!
//! The crate offers two independent ways to evaluate a model:
//!
//! * [`engine`]: a cycle-synchronous discrete-event simulator with batch-means
//!   confidence intervals, for any two-moment duration distribution;
//! * [`oracle`]: an exact discrete-time Markov chain solver for instances
//!   whose durations are all geometric.
//!
//! The numeric layers ([`oracle`], [`metrics`]) are generic over [`Scalar`];
//! the aliases below fix them to `f64`.

pub mod arbiter;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod stochastics;

pub use scalar::Scalar;

pub type MetricsReport = metrics::MetricsReport<f64>;
pub type PeMetrics = metrics::PeMetrics<f64>;
pub type Estimate = metrics::Estimate<f64>;
pub type TransitionMatrix = oracle::TransitionMatrix<f64>;
pub type Stationary = oracle::Stationary<f64>;
