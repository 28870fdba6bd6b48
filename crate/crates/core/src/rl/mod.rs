//! Rewards, group-relative advantages and the clipped token-level policy loss.

mod advantage;
mod group;
mod judge;
mod loss;
pub mod toy;

use thiserror::Error;

pub use advantage::{advantages, loo_advantages, mean_advantages, AdvantageMode};
pub use group::{filter_group, prepare_group, GroupSample, PreparedGroup, RolloutGroup};
pub use judge::{judge, normalize_answer, ExactMatchJudge, Judge, RewardRecord};
pub use loss::{grpo_loss, ClipConfig, LossReport, TokenBatch};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RlError {
    #[error("advantage needs a group of at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("group {0} has no loss-masked tokens")]
    EmptyMask(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("token vectors differ in length")]
    LengthMismatch,
    #[error("need 0 < eps_low <= eps_high < 1, got ({0}, {1})")]
    InvalidClip(f64, f64),
    #[error("toy policy shape ({0} features, {1} actions, {2} params) is invalid or too large")]
    ToyShape(usize, usize, usize),
}
