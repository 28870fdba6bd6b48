use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scheduler::execute;
use super::{OrchestratorError, RolloutJob};
use crate::agent::{parse_action, truncate_to, Action, Limits, MessageList, PolicyEndpoint, Role, RolloutMode, Termination};
use crate::gateway::ToolInvoker;
use crate::rl::normalize_answer;
use crate::seeds;

pub const ANSWER_CAP: usize = 1024;

const SYNTHESIS_SYSTEM: &str = "Several independent research agents investigated the same question. \
Each left a compressed report of its findings and a candidate answer. Weigh the evidence across \
reports, resolve disagreements, and give one final answer inside <answer></answer>.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyOptions {
    pub n: usize,
    pub limits: Limits,
    pub run_seed: u64,
    pub concurrency: usize,
    pub answer_cap: usize,
}

impl Default for HeavyOptions {
    fn default() -> Self {
        HeavyOptions {
            n: 3,
            limits: Limits::default(),
            run_seed: 0,
            concurrency: 3,
            answer_cap: ANSWER_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: usize,
    pub report: String,
    pub answer: Option<String>,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyRun {
    pub n: usize,
    pub reports: Vec<AgentReport>,
    pub final_answer: String,
    /// True when the synthesis endpoint produced the final answer.
    pub synthesized: bool,
    pub synthesis_prompt_bytes: Option<usize>,
}

/// Index of the winning agent: most common normalized answer, ties to the
/// group containing the lowest agent index. `None` if no agent answered.
pub fn majority_vote(answers: &[Option<String>]) -> Option<usize> {
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        if let Some(a) = a {
            groups.entry(normalize_answer(a)).or_insert((0, i)).0 += 1;
        }
    }
    groups
        .into_values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .map(|(_, first)| first)
}

/// Prompt enumerating every agent's capped report and answer. Its size does
/// not depend on how many steps the agents took.
pub fn synthesis_prompt(question: &str, reports: &[AgentReport], report_cap: usize, answer_cap: usize) -> MessageList {
    let mut body = format!("Question:\n{question}\n");
    for r in reports {
        let (report, _) = truncate_to(&r.report, report_cap);
        let (answer, _) = truncate_to(r.answer.as_deref().unwrap_or("(no answer)"), answer_cap);
        body.push_str(&format!("\nAgent {}\nReport:\n{report}\nAnswer:\n{answer}\n", r.agent));
    }
    let mut m = MessageList::default();
    m.push(Role::System, SYNTHESIS_SYSTEM);
    m.push(Role::User, body);
    m
}

/// `n` context-managed agents on one question, then synthesis or a vote.
/// `tools` is either one invoker shared by all agents (shared cache) or one
/// per agent.
pub fn heavy_mode(
    question: &str,
    policy: Arc<dyn PolicyEndpoint>,
    tools: &[Arc<dyn ToolInvoker>],
    synthesis: Option<&dyn PolicyEndpoint>,
    opts: &HeavyOptions,
) -> Result<HeavyRun, OrchestratorError> {
    let n = opts.n;
    if n == 0 {
        return Err(OrchestratorError::NoAgents);
    }
    let per_agent: Vec<Arc<dyn ToolInvoker>> = match tools.len() {
        1 => vec![tools[0].clone(); n],
        m if m == n => tools.to_vec(),
        got => return Err(OrchestratorError::ToolEndpointCount { expected: n, got }),
    };
    let qid = format!("heavy-{:016x}", seeds::hash_str(question));
    let jobs: Vec<RolloutJob> = (1..=n)
        .map(|slot| RolloutJob::new(qid.clone(), question, RolloutMode::Cm, slot, opts.run_seed, &opts.limits))
        .collect();
    let out = execute(&jobs, policy, per_agent, opts.concurrency.max(1))?;
    let reports: Vec<AgentReport> = out
        .trajectories
        .iter()
        .enumerate()
        .map(|(agent, t)| AgentReport {
            agent,
            report: t.final_report().unwrap_or_default().to_string(),
            answer: t.final_answer().map(str::to_string),
            termination: t.termination,
        })
        .collect();
    let answers: Vec<Option<String>> = reports.iter().map(|r| r.answer.clone()).collect();
    let winner = majority_vote(&answers).ok_or(OrchestratorError::AllAgentsFailed(n))?;
    let voted = answers[winner].clone().expect("winner answered");

    let mut run = HeavyRun {
        n,
        final_answer: voted,
        synthesized: false,
        synthesis_prompt_bytes: None,
        reports,
    };
    if let (Some(synth), true) = (synthesis, n > 1) {
        let prompt = synthesis_prompt(question, &run.reports, opts.limits.report_cap, opts.answer_cap);
        run.synthesis_prompt_bytes = Some(prompt.byte_len());
        let sampling = opts.limits.sampling.with_seed(seeds::derive(&[opts.run_seed, seeds::hash_str(&qid)]));
        match synth.generate(&prompt, &sampling) {
            Ok(text) => {
                let answer = match parse_action(&text) {
                    Ok(p) => match p.action {
                        Action::FinalAnswer { text } => text,
                        Action::ToolCall { .. } => String::new(),
                    },
                    Err(_) => text.trim().to_string(),
                };
                if answer.trim().is_empty() {
                    log::warn!("synthesis produced no answer; keeping the majority vote");
                } else {
                    run.final_answer = answer;
                    run.synthesized = true;
                }
            }
            Err(e) => log::warn!("synthesis failed ({e}); keeping the majority vote"),
        }
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn some(v: &[&str]) -> Vec<Option<String>> {
        v.iter().map(|s| Some(s.to_string())).collect()
    }

    #[test]
    fn vote_rules() {
        assert_eq!(majority_vote(&some(&["A", "A", "B"])), Some(0));
        assert_eq!(majority_vote(&some(&["B", "A", "A"])), Some(1));
        assert_eq!(majority_vote(&some(&["A", "B"])), Some(0));
        assert_eq!(majority_vote(&some(&["b", "the A", "a."])), Some(1));
        assert_eq!(majority_vote(&[None, Some("x".into())]), Some(1));
        assert_eq!(majority_vote(&[None, None]), None);
    }

    #[test]
    fn prompt_is_capped_per_agent() {
        let big = |agent| AgentReport {
            agent,
            report: "r".repeat(10_000),
            answer: Some("a".repeat(5_000)),
            termination: Termination::Answered,
        };
        let empty = |agent| AgentReport {
            agent,
            report: String::new(),
            answer: Some(String::new()),
            termination: Termination::Answered,
        };
        let p = synthesis_prompt("q", &[big(0), big(1), big(2)], 100, 50);
        let base = synthesis_prompt("q", &[empty(0), empty(1), empty(2)], 100, 50);
        assert_eq!(p.byte_len(), base.byte_len() + 3 * (100 + 50));
    }
}
