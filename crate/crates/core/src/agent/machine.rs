use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gateway::{render_observation, ToolInvoker, ToolRequest, ToolResult, ToolSpec};
use crate::seeds;

use super::parser::{parse_action, parse_cm_output, ParseError};
use super::policy::{PolicyEndpoint, PolicyError, PolicyResponse, SamplingParams};
use super::prompt::{render_cm_prompt, render_react_prompt};
use super::{
    estimate_tokens, truncate_to, Action, Limits, MessageList, Observation, Report, Role, Step,
    Termination, Trajectory, Workspace,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    #[default]
    React,
    Cm,
}

/// Next thing a rollout needs from the outside world.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    CallPolicy {
        messages: MessageList,
        sampling: SamplingParams,
    },
    CallTool(ToolRequest),
    Done,
}

#[derive(Debug, Clone)]
enum Phase {
    NeedPolicy,
    NeedTool { step: Step, request: ToolRequest },
    Done(Termination),
}

/// One rollout as a resumable state machine.
///
/// `poll` yields the next effect; the driver performs it and hands the result
/// back through `feed_policy` or `feed_tool`. The machine never blocks, which
/// lets a scheduler interleave many rollouts at step granularity.
#[derive(Debug, Clone)]
pub struct RolloutMachine {
    mode: RolloutMode,
    question: String,
    registry: Arc<[ToolSpec]>,
    limits: Limits,
    steps: Vec<Step>,
    workspace: Workspace,
    phase: Phase,
    policy_calls: u64,
    policy_failures: usize,
    parse_failures: usize,
    rejected: Option<(String, ParseError)>,
    token_count: usize,
}

impl RolloutMachine {
    pub fn new(
        mode: RolloutMode,
        question: impl Into<String>,
        registry: Arc<[ToolSpec]>,
        limits: Limits,
    ) -> Self {
        let question = question.into();
        RolloutMachine {
            mode,
            workspace: Workspace::initial(question.clone()),
            question,
            registry,
            limits,
            steps: Vec::new(),
            phase: Phase::NeedPolicy,
            policy_calls: 0,
            policy_failures: 0,
            parse_failures: 0,
            rejected: None,
            token_count: 0,
        }
    }

    pub fn mode(&self) -> RolloutMode {
        self.mode
    }

    pub fn is_done(&self) -> bool {
        matches!(self.phase, Phase::Done(_))
    }

    fn base_prompt(&self) -> MessageList {
        match self.mode {
            RolloutMode::React => render_react_prompt(&self.question, &self.steps, &self.registry),
            RolloutMode::Cm => render_cm_prompt(&self.workspace, &self.registry, self.limits.action_cap),
        }
    }

    pub fn poll(&mut self) -> Effect {
        match &self.phase {
            Phase::Done(_) => Effect::Done,
            Phase::NeedTool { request, .. } => Effect::CallTool(request.clone()),
            Phase::NeedPolicy => {
                let mut messages = self.base_prompt();
                if let Some((bad, err)) = &self.rejected {
                    messages.push(Role::Assistant, bad.clone());
                    messages.push(
                        Role::User,
                        format!(
                            "Your previous reply could not be parsed ({err}). Reply again with exactly one \
                             <tool_call> block or an <answer> block."
                        ),
                    );
                }
                if messages.estimated_tokens() > self.limits.context_tokens {
                    self.phase = Phase::Done(Termination::ContextLimit);
                    return Effect::Done;
                }
                let seed = seeds::derive(&[self.limits.seed, self.policy_calls]);
                self.policy_calls += 1;
                Effect::CallPolicy {
                    messages,
                    sampling: self.limits.sampling.with_seed(seed),
                }
            }
        }
    }

    pub fn feed_policy(&mut self, result: Result<PolicyResponse, PolicyError>) {
        if !matches!(self.phase, Phase::NeedPolicy) {
            return;
        }
        let response = match result {
            Ok(r) => r,
            Err(e) => {
                self.policy_failures += 1;
                log::debug!("policy failure {} of {}: {e}", self.policy_failures, self.limits.max_policy_failures);
                if self.policy_failures >= self.limits.max_policy_failures {
                    self.phase = Phase::Done(Termination::PolicyError);
                }
                return;
            }
        };
        self.policy_failures = 0;
        self.token_count += response
            .token_logprobs
            .as_ref()
            .map_or_else(|| estimate_tokens(&response.text), Vec::len);

        let parsed = match self.mode {
            RolloutMode::React => parse_action(&response.text).map(|p| (None, p.thought, p.action)),
            RolloutMode::Cm => {
                parse_cm_output(&response.text).map(|p| (Some(p.report), p.thought, p.action))
            }
        };
        let (report, thought, action) = match parsed {
            Ok(p) => p,
            Err(e) => {
                self.parse_failures += 1;
                if self.parse_failures > self.limits.max_parse_retries {
                    self.phase = Phase::Done(Termination::ParseFailureLimit);
                } else {
                    self.rejected = Some((response.text, e));
                }
                return;
            }
        };
        self.parse_failures = 0;
        self.rejected = None;

        let report = report.map(|r| {
            // A CM turn without a report block keeps the previous report.
            let text = r.unwrap_or_else(|| self.workspace.report.clone());
            let (text, truncated) = truncate_to(&text, self.limits.report_cap);
            Report {
                text: text.to_string(),
                truncated,
            }
        });
        let step = Step {
            thought,
            action,
            observation: None,
            report,
            token_logprobs: response.token_logprobs,
        };

        match &step.action {
            Action::FinalAnswer { .. } => {
                self.steps.push(step);
                self.phase = Phase::Done(Termination::Answered);
            }
            Action::ToolCall { tool_name, arguments } => {
                if self.tool_calls() >= self.limits.max_tool_calls {
                    self.phase = Phase::Done(Termination::StepLimit);
                    return;
                }
                let request = ToolRequest::new(tool_name.clone(), arguments.clone());
                self.phase = Phase::NeedTool { step, request };
            }
        }
    }

    pub fn feed_tool(&mut self, result: &ToolResult) {
        if !matches!(self.phase, Phase::NeedTool { .. }) {
            return;
        }
        let Phase::NeedTool { mut step, .. } =
            std::mem::replace(&mut self.phase, Phase::NeedPolicy)
        else {
            unreachable!()
        };
        let observation = Observation::capped(&render_observation(result), self.limits.observation_cap);
        self.token_count += estimate_tokens(&observation.text);
        step.observation = Some(observation.clone());
        if let Some(report) = &step.report {
            self.workspace.report = report.text.clone();
        }
        self.workspace.last_action = Some(step.action.clone());
        self.workspace.last_observation = Some(observation);
        self.workspace.step_index += 1;
        self.steps.push(step);
    }

    fn tool_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.action.is_tool_call()).count()
    }

    pub fn into_trajectory(self) -> Trajectory {
        let termination = match self.phase {
            Phase::Done(t) => t,
            _ => Termination::PolicyError,
        };
        Trajectory {
            question: self.question,
            steps: self.steps,
            termination,
            token_count: self.token_count,
        }
    }
}

/// Drives a machine to completion against a policy and a gateway.
pub(crate) fn drive(
    mut machine: RolloutMachine,
    policy: &dyn PolicyEndpoint,
    gateway: &dyn ToolInvoker,
) -> Trajectory {
    loop {
        match machine.poll() {
            Effect::Done => return machine.into_trajectory(),
            Effect::CallPolicy { messages, sampling } => {
                let r = policy.scored_generate(&messages, &sampling);
                machine.feed_policy(r);
            }
            Effect::CallTool(request) => {
                let r = gateway.invoke(&request);
                machine.feed_tool(&r);
            }
        }
    }
}

pub fn run_react_rollout(
    question: &str,
    policy: &dyn PolicyEndpoint,
    gateway: &dyn ToolInvoker,
    limits: &Limits,
) -> Trajectory {
    let machine = RolloutMachine::new(
        RolloutMode::React,
        question,
        gateway.tool_specs().into(),
        limits.clone(),
    );
    drive(machine, policy, gateway)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmOutcome {
    pub trajectory: Trajectory,
    pub final_report: String,
}

pub fn run_cm_rollout(
    question: &str,
    policy: &dyn PolicyEndpoint,
    gateway: &dyn ToolInvoker,
    limits: &Limits,
) -> CmOutcome {
    let machine = RolloutMachine::new(
        RolloutMode::Cm,
        question,
        gateway.tool_specs().into(),
        limits.clone(),
    );
    let trajectory = drive(machine, policy, gateway);
    let final_report = trajectory.final_report().unwrap_or_default().to_string();
    CmOutcome {
        trajectory,
        final_report,
    }
}
