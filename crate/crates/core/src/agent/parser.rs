//! Action grammar.
//!
//! ```text
//! <tool_call>
//! {"name": "search", "arguments": {"query": ["..."]}}
//! </tool_call>
//!
//! <tool_call>
//! {"name": "PythonInterpreter", "arguments": {}}
//! <code>
//! print(1 + 1)
//! </code>
//! </tool_call>
//!
//! <answer>...</answer>
//! ```
//!
//! CM-mode outputs additionally start with a `<report>...</report>` block.

use serde_json::{Map, Value};
use thiserror::Error;

use super::{Action, Thought};

pub const TOOL_CALL_OPEN: &str = "<tool_call>";
pub const TOOL_CALL_CLOSE: &str = "</tool_call>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const CODE_OPEN: &str = "<code>";
pub const CODE_CLOSE: &str = "</code>";
pub const REPORT_OPEN: &str = "<report>";
pub const REPORT_CLOSE: &str = "</report>";

/// Argument key that carries a `<code>` payload.
pub const CODE_KEY: &str = "code";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed tool call: {0}")]
    MalformedJson(String),
    #[error("no tool call or answer block found")]
    NoActionBlock,
    #[error("unclosed {0} tag")]
    UnclosedTag(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub thought: Thought,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmOutput {
    /// `None` when the output carried no report block.
    pub report: Option<String>,
    pub thought: Thought,
    pub action: Action,
}

/// Parses one model turn into a thought and the first well-formed action.
pub fn parse_action(output: &str) -> Result<Parsed, ParseError> {
    let mut first_err: Option<ParseError> = None;

    let mut cursor = 0;
    while let Some(rel) = output[cursor..].find(TOOL_CALL_OPEN) {
        let open = cursor + rel;
        let body_start = open + TOOL_CALL_OPEN.len();
        let Some(close_rel) = output[body_start..].find(TOOL_CALL_CLOSE) else {
            first_err.get_or_insert(ParseError::UnclosedTag("tool_call"));
            break;
        };
        let body = &output[body_start..body_start + close_rel];
        match parse_call_body(body) {
            Ok(action) => {
                return Ok(Parsed {
                    thought: Thought(output[..open].to_string()),
                    action,
                })
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
        cursor = body_start + close_rel + TOOL_CALL_CLOSE.len();
    }

    if let Some(open) = output.find(ANSWER_OPEN) {
        let inner_start = open + ANSWER_OPEN.len();
        match output[inner_start..].find(ANSWER_CLOSE) {
            Some(len) => {
                return Ok(Parsed {
                    thought: Thought(output[..open].to_string()),
                    action: Action::FinalAnswer {
                        text: output[inner_start..inner_start + len].to_string(),
                    },
                })
            }
            None => {
                first_err.get_or_insert(ParseError::UnclosedTag("answer"));
            }
        }
    }

    Err(first_err.unwrap_or(ParseError::NoActionBlock))
}

fn parse_call_body(body: &str) -> Result<Action, ParseError> {
    let mut stream = serde_json::Deserializer::from_str(body).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(ParseError::MalformedJson(e.to_string())),
        None => return Err(ParseError::MalformedJson("empty tool call".into())),
    };
    let json_end = stream.byte_offset();

    let Value::Object(mut obj) = value else {
        return Err(ParseError::MalformedJson("tool call is not an object".into()));
    };
    let name = match obj.remove("name") {
        Some(Value::String(s)) if !s.is_empty() => s,
        _ => return Err(ParseError::MalformedJson("missing tool name".into())),
    };
    let mut arguments = match obj.remove("arguments") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(ParseError::MalformedJson("arguments is not an object".into())),
        None => return Err(ParseError::MalformedJson("missing arguments".into())),
    };
    if !obj.is_empty() {
        return Err(ParseError::MalformedJson("unexpected keys in tool call".into()));
    }

    let rest = body[json_end..].trim_start();
    if let Some(after_open) = rest.strip_prefix(CODE_OPEN) {
        let Some(len) = after_open.find(CODE_CLOSE) else {
            return Err(ParseError::UnclosedTag("code"));
        };
        let tail = &after_open[len + CODE_CLOSE.len()..];
        if !tail.trim().is_empty() {
            return Err(ParseError::MalformedJson("trailing content after code".into()));
        }
        let code = &after_open[..len];
        let code = code.strip_prefix('\n').unwrap_or(code);
        let code = code.strip_suffix('\n').unwrap_or(code);
        arguments.insert(CODE_KEY.to_string(), Value::String(code.to_string()));
    } else if !rest.trim().is_empty() {
        return Err(ParseError::MalformedJson("trailing content after call object".into()));
    }

    Ok(Action::ToolCall {
        tool_name: name,
        arguments: Value::Object(arguments),
    })
}

/// Renders an action in the grammar accepted by [`parse_action`].
pub fn serialize_action(action: &Action) -> String {
    match action {
        Action::FinalAnswer { text } => format!("{ANSWER_OPEN}{text}{ANSWER_CLOSE}"),
        Action::ToolCall {
            tool_name,
            arguments,
        } => {
            let mut args = match arguments {
                Value::Object(m) => m.clone(),
                _ => Map::new(),
            };
            let code = match args.get(CODE_KEY) {
                Some(Value::String(_)) => match args.remove(CODE_KEY) {
                    Some(Value::String(c)) => Some(c),
                    _ => None,
                },
                _ => None,
            };
            let name = Value::String(tool_name.clone());
            let mut out = format!(
                "{TOOL_CALL_OPEN}\n{{\"name\": {name}, \"arguments\": {}}}\n",
                Value::Object(args)
            );
            if let Some(code) = code {
                out.push_str(CODE_OPEN);
                out.push('\n');
                out.push_str(&code);
                out.push('\n');
                out.push_str(CODE_CLOSE);
                out.push('\n');
            }
            out.push_str(TOOL_CALL_CLOSE);
            out
        }
    }
}

pub fn render_report(text: &str) -> String {
    format!("{REPORT_OPEN}{text}{REPORT_CLOSE}\n")
}

/// Parses a CM-mode turn: optional leading report block, then a normal action.
pub fn parse_cm_output(output: &str) -> Result<CmOutput, ParseError> {
    let mut body = output;
    let mut report = None;
    if let Some(open) = output.find(REPORT_OPEN) {
        // Only a report that precedes every action block counts.
        let first_action = [output.find(TOOL_CALL_OPEN), output.find(ANSWER_OPEN)]
            .into_iter()
            .flatten()
            .min();
        if first_action.is_none_or(|a| open < a) {
            let inner = open + REPORT_OPEN.len();
            let Some(len) = output[inner..].find(REPORT_CLOSE) else {
                return Err(ParseError::UnclosedTag("report"));
            };
            report = Some(output[inner..inner + len].to_string());
            body = &output[inner + len + REPORT_CLOSE.len()..];
            body = body.strip_prefix('\n').unwrap_or(body);
        }
    }
    let Parsed { thought, action } = parse_action(body)?;
    Ok(CmOutput {
        report,
        thought,
        action,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_search_call() {
        let out = "let me look\n<tool_call>{\"name\": \"search\", \"arguments\": {\"query\": [\"q\"]}}</tool_call>";
        let p = parse_action(out).unwrap();
        assert_eq!(p.thought.as_str(), "let me look\n");
        assert_eq!(p.action, Action::tool_call("search", json!({"query": ["q"]})));
    }

    #[test]
    fn parses_answer() {
        let p = parse_action("<answer>42</answer>").unwrap();
        assert_eq!(p.action, Action::answer("42"));
        assert_eq!(p.thought.as_str(), "");
    }

    #[test]
    fn unterminated_call_is_unclosed() {
        assert_eq!(
            parse_action("<tool_call>{\"name\": \"search\""),
            Err(ParseError::UnclosedTag("tool_call"))
        );
        assert_eq!(parse_action("<answer>4"), Err(ParseError::UnclosedTag("answer")));
    }

    #[test]
    fn missing_blocks_and_bad_json() {
        assert_eq!(parse_action("just text"), Err(ParseError::NoActionBlock));
        assert!(matches!(
            parse_action("<tool_call>{\"name\": }</tool_call>"),
            Err(ParseError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_action("<tool_call>{\"name\": \"\", \"arguments\": {}}</tool_call>"),
            Err(ParseError::MalformedJson(_))
        ));
        assert!(matches!(
            parse_action("<tool_call>{\"name\": \"x\", \"arguments\": []}</tool_call>"),
            Err(ParseError::MalformedJson(_))
        ));
    }

    #[test]
    fn first_call_wins() {
        let out = "a<tool_call>{\"name\": \"one\", \"arguments\": {}}</tool_call>b<tool_call>{\"name\": \"two\", \"arguments\": {}}</tool_call>";
        let p = parse_action(out).unwrap();
        assert_eq!(p.action, Action::tool_call("one", json!({})));
    }

    #[test]
    fn malformed_call_falls_back_to_next_block() {
        let out = "<tool_call>{bad</tool_call><answer>x</answer>";
        assert_eq!(parse_action(out).unwrap().action, Action::answer("x"));
    }

    #[test]
    fn code_block_captured() {
        let out = "<tool_call>\n{\"name\": \"PythonInterpreter\", \"arguments\": {}}\n<code>\nprint(1+1)\n</code>\n</tool_call>";
        let p = parse_action(out).unwrap();
        assert_eq!(
            p.action,
            Action::tool_call("PythonInterpreter", json!({"code": "print(1+1)"}))
        );
        assert_eq!(serialize_action(&p.action), out);
        assert_eq!(
            parse_action("<tool_call>{\"name\": \"p\", \"arguments\": {}}<code>x</tool_call>"),
            Err(ParseError::UnclosedTag("code"))
        );
    }

    #[test]
    fn serialization_matches_grammar() {
        let a = Action::tool_call("search", json!({"query": ["a b"]}));
        assert_eq!(
            serialize_action(&a),
            "<tool_call>\n{\"name\": \"search\", \"arguments\": {\"query\":[\"a b\"]}}\n</tool_call>"
        );
    }

    #[test]
    fn cm_output_report() {
        let out = "<report>R</report>\nthinking<answer>A</answer>";
        let p = parse_cm_output(out).unwrap();
        assert_eq!(p.report.as_deref(), Some("R"));
        assert_eq!(p.thought.as_str(), "thinking");
        assert_eq!(p.action, Action::answer("A"));
        assert_eq!(parse_cm_output("<answer>A</answer>").unwrap().report, None);
        assert_eq!(
            parse_cm_output("<report>R <answer>A</answer>"),
            Err(ParseError::UnclosedTag("report"))
        );
    }
}
