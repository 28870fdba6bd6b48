//! Desk-scale harness for training and evaluating tool-using research agents.
//!
//! The crate covers the full loop at laptop scale: a rollout runtime with
//! full-history and context-managed modes ([`agent`]), a tool gateway with
//! rate limiting, caching, retries and failover ([`gateway`]), a simulated
//! search/visit environment ([`simenv`]), verifiable multi-hop task synthesis
//! ([`synth`]), group-relative policy optimisation ([`rl`]), difficulty-based
//! data curation ([`curation`]), batched rollout scheduling and heavy mode
//! ([`orchestrator`]), convex model merging ([`merge`]) and evaluation
//! metrics ([`eval`]).
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix
//! the precision.

pub mod agent;
pub mod config;
pub mod curation;
pub mod eval;
pub mod gateway;
pub mod manifest;
pub mod merge;
pub mod orchestrator;
pub mod rl;
pub mod scalar;
pub mod seeds;
pub mod simenv;
pub mod synth;
pub mod trainer;

pub type ParamSet32 = merge::ParamSet<f32>;
pub type ParamSet64 = merge::ParamSet<f64>;
pub type TokenBatch32 = rl::TokenBatch<f32>;
pub type TokenBatch64 = rl::TokenBatch<f64>;
pub type ClipConfig32 = rl::ClipConfig<f32>;
pub type ClipConfig64 = rl::ClipConfig<f64>;
pub type RolloutGroup32 = rl::RolloutGroup<f32>;
pub type RolloutGroup64 = rl::RolloutGroup<f64>;
pub type SoftmaxPolicy32 = rl::toy::SoftmaxPolicy<f32>;
pub type SoftmaxPolicy64 = rl::toy::SoftmaxPolicy<f64>;
