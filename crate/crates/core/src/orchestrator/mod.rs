//! Step-level scheduling of many rollouts, group collection for training, and
//! heavy mode (parallel context-managed agents plus synthesis).

mod endpoints;
mod groups;
mod heavy;
mod scheduler;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use endpoints::{Locator, ENV_POLICY, ENV_TOOLS};
pub use groups::{collect_groups, CollectedGroup, GroupCollection};
pub use heavy::{heavy_mode, majority_vote, synthesis_prompt, AgentReport, HeavyOptions, HeavyRun, ANSWER_CAP};
pub use scheduler::{run_batch, run_batch_interleaved, BatchOutput};

use crate::agent::{Limits, Message, PolicyEndpoint, Role, RolloutMode};
use crate::gateway::{render_observation, ToolInvoker, ToolResult};
use crate::seeds;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("concurrency limit must be at least 1")]
    ZeroConcurrency,
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("heavy mode needs at least one agent")]
    NoAgents,
    #[error("all {0} heavy-mode agents failed to answer")]
    AllAgentsFailed(usize),
    #[error("duplicate (question, slot) = ({0}, {1}) in batch")]
    DuplicateJob(String, usize),
    #[error("expected {expected} tool endpoints, got {got}")]
    ToolEndpointCount { expected: usize, got: usize },
    #[error("bad endpoint locator '{0}': {1}")]
    BadLocator(String, String),
    #[error("endpoint {0} unreachable: {1}")]
    Unreachable(String, String),
}

/// Policy and tool servers shared by all rollouts of a run.
#[derive(Clone)]
pub struct Endpoints {
    pub policy: Arc<dyn PolicyEndpoint>,
    pub tools: Arc<dyn ToolInvoker>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutJob {
    pub question_id: String,
    pub question: String,
    pub mode: RolloutMode,
    /// Group slot, 1-based.
    pub slot: usize,
    /// Per-rollout limits; `limits.seed` is the rollout seed.
    pub limits: Limits,
}

/// Rollout seed for one group slot of one question.
pub fn job_seed(run_seed: u64, question_id: &str, slot: usize) -> u64 {
    seeds::derive(&[run_seed, seeds::hash_str(question_id), slot as u64])
}

impl RolloutJob {
    pub fn new(
        question_id: impl Into<String>,
        question: impl Into<String>,
        mode: RolloutMode,
        slot: usize,
        run_seed: u64,
        base: &Limits,
    ) -> Self {
        let question_id = question_id.into();
        let mut limits = base.clone();
        limits.seed = job_seed(run_seed, &question_id, slot);
        RolloutJob {
            question: question.into(),
            question_id,
            mode,
            slot,
            limits,
        }
    }
}

/// Formats any tool result as the single tool message the policy sees next.
pub fn handle_interaction(result: &ToolResult) -> Message {
    Message::new(Role::Tool, render_observation(result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{degraded_payload, Source, Status};

    fn result(status: Status, payload: &str) -> ToolResult {
        ToolResult {
            tool_name: "search".into(),
            status,
            payload: payload.into(),
            source: Source::Primary,
            attempts: 1,
            latency_ms: 3,
        }
    }

    #[test]
    fn interaction_messages() {
        let m = handle_interaction(&result(Status::Ok, "X"));
        assert_eq!((m.role, m.content.as_str()), (Role::Tool, "X"));
        let d = degraded_payload("search", "timed out");
        assert!(handle_interaction(&result(Status::Degraded, &d)).content.contains("[degraded]"));
        assert!(handle_interaction(&result(Status::Error, "bad")).content.starts_with("[search error]"));
        let mut slower = result(Status::Ok, "X");
        slower.latency_ms = 900;
        assert_eq!(handle_interaction(&slower), m);
    }

    #[test]
    fn seeds_differ_by_slot_and_question() {
        assert_ne!(job_seed(1, "q1", 1), job_seed(1, "q1", 2));
        assert_ne!(job_seed(1, "q1", 1), job_seed(1, "q2", 1));
        assert_eq!(job_seed(1, "q1", 1), job_seed(1, "q1", 1));
    }
}
