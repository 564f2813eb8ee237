//! Constrained non-stationary kernelized bandits for beam alignment.

mod linalg;

pub mod bandit;
pub mod env;
pub mod gp;
pub mod kernels;
pub mod metrics;
pub mod oracle;

pub use bandit::{
    BanditConfig, BanditState, Decision, GammaMode, ProjectionScope, RestartSchedule, StepOutcome,
};
pub use env::{BeamCodebook, ChannelModel, Drift, EnvironmentTrace, SyntheticModel};
pub use gp::PosteriorState;
pub use kernels::{GramMatrix, KernelKind, KernelSpec};
pub use metrics::{RunMetrics, SeedSummary};
pub use oracle::OraclePolicy;
