//! Two-sided matching with classical mechanisms (deferred acceptance,
//! random serial dictatorship), a matching network trained against a
//! stability/strategyproofness tradeoff, and brute-force oracles.

pub mod autodiff;
pub mod error;
pub mod mechanisms;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod prefs;
pub mod train;

pub use error::{Error, Result};
pub use mechanisms::{
    bvn_decompose, da, lift_mechanism, rsd_exact, rsd_monte_carlo, BaselineKind,
    DeterministicMatching, Mechanism, Proposing, RandomizedMatching,
};
pub use metrics::{evaluate, EvalReport};
pub use net::{NetworkDims, NetworkParams, NeuralMechanism};
pub use prefs::{AgentId, Choice, DistributionConfig, PreferenceOrder, PreferenceProfile, Side};
pub use train::{train, TrainConfig};
