//! Rollout state machine, prompt rendering and the action grammar.
//!
//! A rollout alternates policy calls and tool calls. Two modes exist:
//!
//! * **ReAct**: every policy call sees the full message history.
//! * **Context management (CM)**: every policy call sees only the question,
//!   the evolving report, and the most recent action/observation pair, so the
//!   prompt size is bounded independently of the step count.

mod machine;
pub mod parser;
pub mod policy;
pub mod prompt;

use serde::{Deserialize, Serialize};

pub use machine::{
    run_cm_rollout, run_react_rollout, CmOutcome, Effect, RolloutMachine, RolloutMode,
};
pub use parser::{parse_action, parse_cm_output, serialize_action, CmOutput, ParseError, Parsed};
pub use policy::{
    PolicyEndpoint, PolicyError, PolicyRequest, PolicyResponse, SamplingParams, ScriptedPolicy,
    TcpPolicyClient,
};
pub use prompt::{render_cm_prompt, render_react_prompt};

/// Estimated token count for text when the policy reports none.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Thought(pub String);

impl Thought {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    ToolCall {
        tool_name: String,
        arguments: serde_json::Value,
    },
    FinalAnswer {
        text: String,
    },
}

impl Action {
    pub fn tool_call(name: impl Into<String>, arguments: serde_json::Value) -> Self {
        Action::ToolCall {
            tool_name: name.into(),
            arguments,
        }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Action::FinalAnswer { text: text.into() }
    }

    pub fn is_tool_call(&self) -> bool {
        matches!(self, Action::ToolCall { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    #[serde(default)]
    pub truncated: bool,
}

impl Observation {
    /// Builds an observation, cutting `text` to at most `cap` bytes on a char boundary.
    pub fn capped(text: &str, cap: usize) -> Self {
        let (text, truncated) = truncate_to(text, cap);
        Observation {
            text: text.to_string(),
            truncated,
        }
    }
}

/// Report block emitted by a CM-mode step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub text: String,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub thought: Thought,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    /// Updated report `S_t`; present only for CM-mode steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Report>,
    /// Per-token log-probabilities of the generated text, when the policy scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

impl Step {
    /// Text the agent produced for this step in the action grammar.
    pub fn generated_text(&self) -> String {
        let mut out = String::new();
        if let Some(r) = &self.report {
            out.push_str(&parser::render_report(&r.text));
        }
        out.push_str(&self.thought.0);
        out.push_str(&serialize_action(&self.action));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    StepLimit,
    ContextLimit,
    ParseFailureLimit,
    PolicyError,
}

impl Termination {
    /// Ended because a length budget ran out rather than by answering.
    pub fn is_truncation(self) -> bool {
        matches!(self, Termination::StepLimit | Termination::ContextLimit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub question: String,
    pub steps: Vec<Step>,
    pub termination: Termination,
    /// Generated plus observation tokens across all steps.
    pub token_count: usize,
}

impl Trajectory {
    pub fn final_answer(&self) -> Option<&str> {
        match self.steps.last().map(|s| &s.action) {
            Some(Action::FinalAnswer { text }) if self.termination == Termination::Answered => {
                Some(text)
            }
            _ => None,
        }
    }

    pub fn tool_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.action.is_tool_call()).count()
    }

    /// Final report of a CM rollout, if any step produced one.
    pub fn final_report(&self) -> Option<&str> {
        self.steps
            .iter()
            .rev()
            .find_map(|s| s.report.as_ref().map(|r| r.text.as_str()))
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

/// Markov state for CM mode: `(q, S_{t-1}, a_{t-1}, o_{t-1})`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub question: String,
    pub report: String,
    pub last_action: Option<Action>,
    pub last_observation: Option<Observation>,
    pub step_index: usize,
}

impl Workspace {
    pub fn initial(question: impl Into<String>) -> Self {
        Workspace {
            question: question.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageList(pub Vec<Message>);

impl MessageList {
    pub fn push(&mut self, role: Role, content: impl Into<String>) {
        self.0.push(Message::new(role, content));
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Message> {
        self.0.iter()
    }

    /// Total content bytes.
    pub fn byte_len(&self) -> usize {
        self.0.iter().map(|m| m.content.len()).sum()
    }

    pub fn estimated_tokens(&self) -> usize {
        self.0.iter().map(|m| estimate_tokens(&m.content)).sum()
    }

    pub fn is_prefix_of(&self, other: &MessageList) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

/// Budgets and retry policy for a single rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_tool_calls: usize,
    pub context_tokens: usize,
    pub max_policy_failures: usize,
    pub max_parse_retries: usize,
    pub observation_cap: usize,
    pub report_cap: usize,
    /// Bytes of the previous action rendered into a CM prompt.
    pub action_cap: usize,
    pub sampling: SamplingParams,
    pub seed: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_tool_calls: 128,
            context_tokens: 128 * 1024,
            max_policy_failures: 3,
            max_parse_retries: 3,
            observation_cap: 4 * 1024,
            report_cap: 8 * 1024,
            action_cap: 2 * 1024,
            sampling: SamplingParams::default(),
            seed: 0,
        }
    }
}

/// Truncates to at most `cap` bytes without splitting a character.
pub fn truncate_to(text: &str, cap: usize) -> (&str, bool) {
    if text.len() <= cap {
        return (text, false);
    }
    let mut end = cap;
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    (&text[..end], true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_respects_char_boundaries() {
        let (t, cut) = truncate_to("héllo", 2);
        assert_eq!(t, "h");
        assert!(cut);
        assert_eq!(truncate_to("abc", 3), ("abc", false));
        let obs = Observation::capped(&"x".repeat(5000), 4096);
        assert_eq!(obs.text.len(), 4096);
        assert!(obs.truncated);
    }

    #[test]
    fn final_answer_requires_answered_termination() {
        let t = Trajectory {
            question: "q".into(),
            steps: vec![Step {
                thought: Thought::default(),
                action: Action::answer("42"),
                observation: None,
                report: None,
                token_logprobs: None,
            }],
            termination: Termination::Answered,
            token_count: 1,
        };
        assert_eq!(t.final_answer(), Some("42"));
        let line = t.to_json_line();
        let back: Trajectory = serde_json::from_str(&line).unwrap();
        assert_eq!(back, t);
    }
}
