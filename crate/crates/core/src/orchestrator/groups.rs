use serde::{Deserialize, Serialize};

use super::scheduler::run_batch;
use super::{Endpoints, OrchestratorError, RolloutJob};
use crate::agent::{Limits, RolloutMode, Termination, Trajectory};
use crate::manifest::{Manifest, ManifestEvent};
use crate::rl::{Judge, RewardRecord, RolloutGroup, GroupSample, TokenBatch};
use crate::synth::QATask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectedGroup {
    pub question_id: String,
    pub question: String,
    pub gold: String,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<RewardRecord>,
}

impl CollectedGroup {
    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().map(|r| r.reward as f64).sum::<f64>() / self.rewards.len().max(1) as f64
    }

    /// Token view for the loss: generated-token log-probabilities only, taken
    /// as both old and new (on-policy). Steps without scores contribute nothing.
    pub fn to_rollout_group(&self) -> RolloutGroup<f64> {
        let samples = self
            .trajectories
            .iter()
            .zip(&self.rewards)
            .map(|(t, r)| {
                let logp: Vec<f64> = t.steps.iter().flat_map(|s| s.token_logprobs.clone().unwrap_or_default()).collect();
                let mask = vec![true; logp.len()];
                GroupSample {
                    tokens: TokenBatch::on_policy(logp, mask),
                    reward: r.reward as f64,
                    termination: t.termination,
                    excluded: false,
                }
            })
            .collect();
        RolloutGroup {
            question: self.question.clone(),
            samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupCollection {
    pub groups: Vec<CollectedGroup>,
    /// Question ids dropped for having fewer than two completed rollouts.
    pub dropped: Vec<String>,
}

pub fn judge_trajectory(judge: &dyn Judge, t: &Trajectory, gold: &str) -> RewardRecord {
    judge.judge(t.final_answer().unwrap_or_default(), gold)
}

/// `g` rollouts per task with seeds from `(run_seed, task id, slot)`, judged
/// against the task answer. A rollout counts as completed unless the policy
/// endpoint failed; tasks with fewer than two completed rollouts are dropped.
#[allow(clippy::too_many_arguments)]
pub fn collect_groups(
    tasks: &[QATask],
    g: usize,
    mode: RolloutMode,
    endpoints: &Endpoints,
    base: &Limits,
    run_seed: u64,
    concurrency: usize,
    judge: &dyn Judge,
    manifest: &Manifest,
) -> Result<GroupCollection, OrchestratorError> {
    if g < 2 {
        return Err(OrchestratorError::GroupTooSmall(g));
    }
    let jobs: Vec<RolloutJob> = tasks
        .iter()
        .flat_map(|t| (1..=g).map(move |slot| RolloutJob::new(t.id.clone(), t.question.clone(), mode, slot, run_seed, base)))
        .collect();
    for (i, j) in jobs.iter().enumerate() {
        manifest.record(&ManifestEvent::JobStart {
            job: i,
            question_id: j.question_id.clone(),
            slot: j.slot,
            seed: j.limits.seed,
        });
    }
    let out = run_batch(&jobs, endpoints, concurrency)?;
    let mut collection = GroupCollection::default();
    for (ti, task) in tasks.iter().enumerate() {
        let mut trajectories = Vec::new();
        let mut rewards = Vec::new();
        for k in 0..g {
            let job = ti * g + k;
            let t = &out.trajectories[job];
            let reward = judge_trajectory(judge, t, &task.answer);
            manifest.record(&ManifestEvent::JobEnd {
                job,
                question_id: task.id.clone(),
                termination: t.termination,
                tool_calls: t.tool_calls(),
                token_count: t.token_count,
                reward: Some(reward.reward),
            });
            if t.termination != Termination::PolicyError {
                trajectories.push(t.clone());
                rewards.push(reward);
            }
        }
        if trajectories.len() < 2 {
            log::warn!("dropping question {}: only {} completed rollouts", task.id, trajectories.len());
            manifest.record(&ManifestEvent::GroupDropped {
                question_id: task.id.clone(),
                completed: trajectories.len(),
            });
            collection.dropped.push(task.id.clone());
            continue;
        }
        collection.groups.push(CollectedGroup {
            question_id: task.id.clone(),
            question: task.question.clone(),
            gold: task.answer.clone(),
            trajectories,
            rewards,
        });
    }
    Ok(collection)
}
