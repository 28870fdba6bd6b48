//! Policy wire contract.
//!
//! A policy maps a message list plus sampling parameters to generated text and
//! optionally per-token log-probabilities. Over a byte stream, each request and
//! response is a single line of JSON.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{prompt, MessageList};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_new_tokens: usize,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.85,
            top_p: 0.95,
            repetition_penalty: 1.1,
            max_new_tokens: 8192,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(PolicyError::Rejected(format!("top_p {} not in (0, 1]", self.top_p)));
        }
        if !(self.temperature >= 0.0) {
            return Err(PolicyError::Rejected(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingParams {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy transport failure: {0}")]
    Transport(String),
    #[error("policy rejected request: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub messages: MessageList,
    pub sampling: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

/// A language-model policy. Implementations hold no per-conversation state and
/// must accept concurrent callers.
pub trait PolicyEndpoint: Send + Sync {
    fn generate(&self, messages: &MessageList, sampling: &SamplingParams)
        -> Result<String, PolicyError>;

    fn scored_generate(
        &self,
        messages: &MessageList,
        sampling: &SamplingParams,
    ) -> Result<PolicyResponse, PolicyError> {
        Ok(PolicyResponse {
            text: self.generate(messages, sampling)?,
            token_logprobs: None,
        })
    }
}

impl<P: PolicyEndpoint + ?Sized> PolicyEndpoint for Arc<P> {
    fn generate(
        &self,
        messages: &MessageList,
        sampling: &SamplingParams,
    ) -> Result<String, PolicyError> {
        (**self).generate(messages, sampling)
    }

    fn scored_generate(
        &self,
        messages: &MessageList,
        sampling: &SamplingParams,
    ) -> Result<PolicyResponse, PolicyError> {
        (**self).scored_generate(messages, sampling)
    }
}

/// Replays a fixed script, choosing the output by the step index visible in
/// the prompt. The last entry repeats once the script runs out.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    outputs: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(outputs: impl IntoIterator<Item = S>) -> Self {
        let outputs: Vec<String> = outputs.into_iter().map(Into::into).collect();
        assert!(!outputs.is_empty(), "scripted policy needs at least one output");
        ScriptedPolicy { outputs }
    }
}

impl PolicyEndpoint for ScriptedPolicy {
    fn generate(&self, messages: &MessageList, _: &SamplingParams) -> Result<String, PolicyError> {
        let step = prompt::step_index(messages);
        Ok(self.outputs[step.min(self.outputs.len() - 1)].clone())
    }
}

/// Client for a policy served over TCP, one connection per request.
#[derive(Debug, Clone)]
pub struct TcpPolicyClient {
    addr: SocketAddr,
    timeout: Duration,
}

impl TcpPolicyClient {
    pub fn new(addr: SocketAddr) -> Self {
        TcpPolicyClient {
            addr,
            timeout: Duration::from_secs(300),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Startup reachability probe.
    pub fn probe(&self) -> Result<(), PolicyError> {
        TcpStream::connect_timeout(&self.addr, Duration::from_secs(5))
            .map(|_| ())
            .map_err(|e| PolicyError::Transport(format!("{}: {e}", self.addr)))
    }
}

impl PolicyEndpoint for TcpPolicyClient {
    fn generate(
        &self,
        messages: &MessageList,
        sampling: &SamplingParams,
    ) -> Result<String, PolicyError> {
        self.scored_generate(messages, sampling).map(|r| r.text)
    }

    fn scored_generate(
        &self,
        messages: &MessageList,
        sampling: &SamplingParams,
    ) -> Result<PolicyResponse, PolicyError> {
        let request = PolicyRequest {
            messages: messages.clone(),
            sampling: sampling.clone(),
        };
        json_line_call(self.addr, self.timeout, &request)
    }
}

pub(crate) fn json_line_call<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    addr: SocketAddr,
    timeout: Duration,
    request: &Req,
) -> Result<Resp, PolicyError> {
    let transport = |e: std::io::Error| PolicyError::Transport(e.to_string());
    let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(transport)?;
    stream.set_read_timeout(Some(timeout)).map_err(transport)?;
    let mut line = serde_json::to_string(request).map_err(|e| PolicyError::Rejected(e.to_string()))?;
    line.push('\n');
    stream.write_all(line.as_bytes()).map_err(transport)?;
    let mut reader = BufReader::new(stream);
    let mut reply = String::new();
    reader.read_line(&mut reply).map_err(transport)?;
    if reply.is_empty() {
        return Err(PolicyError::Transport("connection closed without reply".into()));
    }
    serde_json::from_str(&reply).map_err(|e| PolicyError::Transport(format!("bad reply: {e}")))
}

/// Serves JSON-line requests on `listener`, one thread per connection.
/// Returns after `max_connections` connections if given, otherwise never.
pub(crate) fn serve_json_lines<Req, Resp, F>(
    listener: TcpListener,
    max_connections: Option<usize>,
    handler: F,
) -> std::io::Result<()>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
    F: Fn(Req) -> Resp + Send + Sync + 'static,
{
    let handler = Arc::new(handler);
    let mut workers = Vec::new();
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let handler = Arc::clone(&handler);
        workers.push(thread::spawn(move || {
            let _ = handle_connection(stream, &*handler);
        }));
        if max_connections.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

fn handle_connection<Req, Resp, F>(stream: TcpStream, handler: &F) -> std::io::Result<()>
where
    Req: for<'de> Deserialize<'de>,
    Resp: Serialize,
    F: Fn(Req) -> Resp,
{
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Req>(&line) {
            Ok(req) => serde_json::to_string(&handler(req)),
            Err(e) => serde_json::to_string(&serde_json::json!({ "error": e.to_string() })),
        }
        .map_err(std::io::Error::other)?;
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Serves `policy` over the wire contract. Failures are returned as a response
/// with empty text so clients see a parse failure rather than a hang.
pub fn serve_policy(
    listener: TcpListener,
    policy: Arc<dyn PolicyEndpoint>,
    max_connections: Option<usize>,
) -> std::io::Result<()> {
    serve_json_lines(listener, max_connections, move |req: PolicyRequest| {
        match policy.scored_generate(&req.messages, &req.sampling) {
            Ok(resp) => resp,
            Err(e) => {
                log::warn!("policy error while serving: {e}");
                PolicyResponse {
                    text: String::new(),
                    token_logprobs: None,
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Message, Role};

    #[test]
    fn sampling_validation() {
        assert!(SamplingParams::default().validate().is_ok());
        let bad = SamplingParams {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplingParams {
            temperature: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tcp_round_trip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let policy: Arc<dyn PolicyEndpoint> = Arc::new(ScriptedPolicy::new(["<answer>ok</answer>"]));
        let server = thread::spawn(move || serve_policy(listener, policy, Some(2)));
        let client = TcpPolicyClient::new(addr);
        let msgs = MessageList(vec![
            Message::new(Role::System, "s"),
            Message::new(Role::User, "q"),
        ]);
        for _ in 0..2 {
            let out = client.generate(&msgs, &SamplingParams::default()).unwrap();
            assert_eq!(out, "<answer>ok</answer>");
        }
        server.join().unwrap().unwrap();
    }
}
