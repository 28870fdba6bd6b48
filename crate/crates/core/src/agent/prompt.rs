use crate::gateway::ToolSpec;

use super::{parser, serialize_action, truncate_to, MessageList, Role, Step, Workspace};

const REACT_PREAMBLE: &str = "You are a research agent. Investigate the user's question with the \
available tools, checking facts across sources. When you are confident, give the final answer \
inside <answer></answer> tags.";

const CM_PREAMBLE: &str = "You are a research agent working from a compact workspace. Each turn \
shows the question, your running report, and only the most recent action with its observation. \
Begin every reply with the updated report inside <report></report> tags, keeping every finding \
you still need, then reason briefly, then emit exactly one tool call or the final answer inside \
<answer></answer> tags.";

const TOOL_CALL_INSTRUCTIONS: &str = "For each function call, return a JSON object with the \
function name and arguments inside <tool_call></tool_call> XML tags:\n<tool_call>\n\
{\"name\": <function-name>, \"arguments\": <args-json-object>}\n</tool_call>";

pub const EMPTY_REPORT: &str = "(empty)";
pub const NONE_MARKER: &str = "(none)";
const STEP_PREFIX: &str = "Step: ";

fn tools_section(registry: &[ToolSpec]) -> String {
    let mut out = String::from(
        "# Tools\n\nFunction signatures are listed inside <tools></tools> XML tags:\n<tools>\n",
    );
    for spec in registry {
        out.push_str(&spec.signature().to_string());
        out.push('\n');
    }
    out.push_str("</tools>\n\n");
    out.push_str(TOOL_CALL_INSTRUCTIONS);
    out
}

pub fn react_system_prompt(registry: &[ToolSpec]) -> String {
    format!("{REACT_PREAMBLE}\n\n{}", tools_section(registry))
}

pub fn cm_system_prompt(registry: &[ToolSpec]) -> String {
    format!("{CM_PREAMBLE}\n\n{}", tools_section(registry))
}

/// Full-history prompt: system, question, then one assistant/tool pair per step.
pub fn render_react_prompt(question: &str, history: &[Step], registry: &[ToolSpec]) -> MessageList {
    let mut messages = MessageList::default();
    messages.push(Role::System, react_system_prompt(registry));
    messages.push(Role::User, question);
    for step in history {
        messages.push(
            Role::Assistant,
            format!("{}{}", step.thought.0, serialize_action(&step.action)),
        );
        if let Some(obs) = &step.observation {
            messages.push(Role::Tool, obs.text.clone());
        }
    }
    messages
}

/// Workspace-only prompt. The previous action is rendered at most
/// `action_cap` bytes so the prompt stays bounded.
pub fn render_cm_prompt(workspace: &Workspace, registry: &[ToolSpec], action_cap: usize) -> MessageList {
    let report = if workspace.report.is_empty() {
        EMPTY_REPORT
    } else {
        workspace.report.as_str()
    };
    let action = workspace
        .last_action
        .as_ref()
        .map(serialize_action)
        .unwrap_or_else(|| NONE_MARKER.to_string());
    let (action, _) = truncate_to(&action, action_cap);
    let observation = workspace
        .last_observation
        .as_ref()
        .map(|o| o.text.as_str())
        .unwrap_or(NONE_MARKER);

    let mut messages = MessageList::default();
    messages.push(Role::System, cm_system_prompt(registry));
    messages.push(
        Role::User,
        format!(
            "{STEP_PREFIX}{}\nQuestion:\n{}\n\nReport:\n{report}\n\nLast action:\n{action}\n\nLast observation:\n{observation}",
            workspace.step_index, workspace.question
        ),
    );
    messages
}

/// Fixed CM prompt overhead in bytes for a given registry, excluding the
/// variable slots (question, report, action, observation, step digits).
pub fn cm_overhead(registry: &[ToolSpec]) -> usize {
    let empty = Workspace::default();
    let base = render_cm_prompt(&empty, registry, 0);
    base.byte_len() + parser::REPORT_OPEN.len()
}

/// Step index a prompt corresponds to: the `Step:` header of a CM prompt, or
/// the number of completed tool exchanges in a ReAct prompt.
pub fn step_index(messages: &MessageList) -> usize {
    let cm_header = messages
        .iter()
        .find(|m| m.role == Role::User)
        .and_then(|m| m.content.strip_prefix(STEP_PREFIX))
        .and_then(|rest| rest.split('\n').next())
        .and_then(|n| n.trim().parse().ok());
    cm_header.unwrap_or_else(|| messages.iter().filter(|m| m.role == Role::Tool).count())
}

/// Question text carried by a prompt of either mode.
pub fn question_of(messages: &MessageList) -> Option<&str> {
    let user = messages.iter().find(|m| m.role == Role::User)?;
    match user.content.strip_prefix(STEP_PREFIX) {
        Some(rest) => {
            let start = rest.find("\nQuestion:\n")? + "\nQuestion:\n".len();
            let body = &rest[start..];
            let end = body.find("\n\nReport:\n")?;
            Some(&body[..end])
        }
        None => Some(&user.content),
    }
}

/// Parsed view of a CM prompt's user message.
#[derive(Debug, Clone, PartialEq)]
pub struct CmPromptView<'a> {
    pub step_index: usize,
    pub question: &'a str,
    /// Empty when the placeholder was rendered.
    pub report: &'a str,
    /// `None` when no action has been taken yet.
    pub last_action: Option<&'a str>,
    pub last_observation: Option<&'a str>,
}

pub fn parse_cm_prompt(messages: &MessageList) -> Option<CmPromptView<'_>> {
    let user = messages.iter().find(|m| m.role == Role::User)?;
    let rest = user.content.strip_prefix(STEP_PREFIX)?;
    let (step, rest) = rest.split_once("\nQuestion:\n")?;
    let (question, rest) = rest.split_once("\n\nReport:\n")?;
    let (report, rest) = rest.split_once("\n\nLast action:\n")?;
    let (action, observation) = rest.split_once("\n\nLast observation:\n")?;
    Some(CmPromptView {
        step_index: step.trim().parse().ok()?,
        question,
        report: if report == EMPTY_REPORT { "" } else { report },
        last_action: (action != NONE_MARKER).then_some(action),
        last_observation: (observation != NONE_MARKER).then_some(observation),
    })
}
