//! Fault-tolerant tool invocation.
//!
//! Every call runs through the same pipeline: argument validation, cache
//! lookup, per-tool rate admission, backend call with timeout, jittered
//! exponential retry, failover along the backend chain, and finally a
//! degraded or error envelope. [`Gateway::invoke`] always returns a
//! [`ToolResult`]; backend panics are caught and treated as failures.

mod backend;
mod cache;
mod clock;
pub mod interpreter;
mod limiter;
pub mod schema;
mod service;
mod spec;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use backend::{
    Backend, BackendError, CallContext, CannedBackend, FaultInjector, FaultPlan, ScriptedBackend,
};
pub use cache::{cache_key, canonical_json, ResultCache};
pub use clock::{Clock, SystemClock, VirtualClock};
pub use interpreter::SandboxBackend;
pub use limiter::{Admission, RateLimiter};
pub use service::{serve_gateway, RemoteGateway};
pub use spec::{GatewayConfig, RetryPolicy, ToolSpec, BUILTIN_TOOLS, PARSE_FILE, PYTHON, SCHOLAR, SEARCH, VISIT};

use crate::seeds;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("invalid tool spec '{0}': {1}")]
    InvalidSpec(String, String),
    #[error("tool '{0}' references unknown backend '{1}'")]
    UnknownBackend(String, String),
    #[error("duplicate tool '{0}'")]
    DuplicateTool(String),
    #[error("gateway config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub tool_name: String,
    pub arguments: Value,
    pub idempotency_key: String,
}

impl ToolRequest {
    pub fn new(tool_name: impl Into<String>, arguments: Value) -> Self {
        let tool_name = tool_name.into();
        let idempotency_key = cache_key(&tool_name, &arguments);
        ToolRequest {
            tool_name,
            arguments,
            idempotency_key,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Degraded,
    Error,
}

/// Where a result came from. Backups are numbered from 1 along the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Cache,
    Primary,
    Backup(usize),
}

impl Source {
    fn for_chain_index(k: usize) -> Self {
        if k == 0 {
            Source::Primary
        } else {
            Source::Backup(k)
        }
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Source::Cache => s.serialize_str("cache"),
            Source::Primary => s.serialize_str("primary"),
            Source::Backup(k) => s.serialize_str(&format!("backup_{k}")),
        }
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "cache" => Ok(Source::Cache),
            "primary" => Ok(Source::Primary),
            other => other
                .strip_prefix("backup_")
                .and_then(|k| k.parse().ok())
                .filter(|k| *k >= 1)
                .map(Source::Backup)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown source '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub tool_name: String,
    pub status: Status,
    pub payload: String,
    pub source: Source,
    pub attempts: u32,
    pub latency_ms: u64,
}

impl ToolResult {
    fn error(tool: &str, message: String, attempts: u32, latency: Duration) -> Self {
        ToolResult {
            tool_name: tool.to_string(),
            status: Status::Error,
            payload: message,
            source: Source::Primary,
            attempts,
            latency_ms: latency.as_millis() as u64,
        }
    }
}

/// Fixed degraded-result text; rollouts receive it as an ordinary observation.
pub fn degraded_payload(tool: &str, reason: &str) -> String {
    format!(
        "[degraded] The {tool} tool is temporarily unavailable ({reason}). \
         Continue with the information you already have or try another tool."
    )
}

/// Observation text for a tool result, in any status.
pub fn render_observation(result: &ToolResult) -> String {
    match result.status {
        Status::Ok | Status::Degraded => result.payload.clone(),
        Status::Error => format!("[{} error] {}", result.tool_name, result.payload),
    }
}

/// Anything that can execute tool requests for a rollout.
pub trait ToolInvoker: Send + Sync {
    fn invoke(&self, request: &ToolRequest) -> ToolResult;
    fn tool_specs(&self) -> Vec<ToolSpec>;
}

impl<T: ToolInvoker + ?Sized> ToolInvoker for Arc<T> {
    fn invoke(&self, request: &ToolRequest) -> ToolResult {
        (**self).invoke(request)
    }

    fn tool_specs(&self) -> Vec<ToolSpec> {
        (**self).tool_specs()
    }
}

struct Registered {
    spec: ToolSpec,
    limiter: RateLimiter,
}

pub struct GatewayBuilder {
    clock: Arc<dyn Clock>,
    specs: Vec<ToolSpec>,
    backends: HashMap<String, Arc<dyn Backend>>,
    record_grants: bool,
}

impl GatewayBuilder {
    pub fn tool(mut self, spec: ToolSpec) -> Self {
        self.specs.push(spec);
        self
    }

    pub fn tools(mut self, specs: impl IntoIterator<Item = ToolSpec>) -> Self {
        self.specs.extend(specs);
        self
    }

    pub fn backend(mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.backends.insert(id.into(), backend);
        self
    }

    /// Keep a per-tool log of admission grant times (for rate audits).
    pub fn record_grants(mut self, on: bool) -> Self {
        self.record_grants = on;
        self
    }

    pub fn build(self) -> Result<Gateway, GatewayError> {
        let mut tools: Vec<Registered> = Vec::new();
        for spec in self.specs {
            spec.validate()?;
            if tools.iter().any(|t| t.spec.name == spec.name) {
                return Err(GatewayError::DuplicateTool(spec.name));
            }
            if let Some(missing) = spec.backend_chain.iter().find(|b| !self.backends.contains_key(*b)) {
                return Err(GatewayError::UnknownBackend(spec.name.clone(), missing.clone()));
            }
            tools.push(Registered {
                limiter: RateLimiter::new(spec.qps_limit),
                spec,
            });
        }
        Ok(Gateway {
            clock: self.clock,
            tools,
            backends: self.backends,
            cache: ResultCache::default(),
            grants: self.record_grants.then(|| Mutex::new(HashMap::new())),
        })
    }
}

pub struct Gateway {
    clock: Arc<dyn Clock>,
    tools: Vec<Registered>,
    backends: HashMap<String, Arc<dyn Backend>>,
    cache: ResultCache,
    grants: Option<Mutex<HashMap<String, Vec<Duration>>>>,
}

impl Gateway {
    pub fn builder(clock: Arc<dyn Clock>) -> GatewayBuilder {
        GatewayBuilder {
            clock,
            specs: Vec::new(),
            backends: HashMap::new(),
            record_grants: false,
        }
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn registered(&self, name: &str) -> Option<&Registered> {
        self.tools.iter().find(|t| t.spec.name == name)
    }

    /// Rate admission for one backend call of `tool_name` at time `now`.
    /// Unknown tools are never admitted.
    pub fn admit(&self, tool_name: &str, now: Duration) -> Admission {
        let Some(tool) = self.registered(tool_name) else {
            return Admission::Wait(Duration::MAX);
        };
        let a = tool.limiter.admit(now);
        if a == Admission::Granted {
            if let Some(log) = &self.grants {
                log.lock().unwrap().entry(tool_name.to_string()).or_default().push(now);
            }
        }
        a
    }

    /// Grant times recorded for `tool_name` when built with `record_grants(true)`.
    pub fn grant_log(&self, tool_name: &str) -> Vec<Duration> {
        self.grants
            .as_ref()
            .and_then(|g| g.lock().unwrap().get(tool_name).cloned())
            .unwrap_or_default()
    }

    pub fn cache(&self) -> &ResultCache {
        &self.cache
    }

    fn jitter(&self, request: &ToolRequest, chain_index: usize, attempt: u32) -> f64 {
        seeds::unit_interval(seeds::derive(&[
            seeds::hash_str(&request.idempotency_key),
            chain_index as u64,
            attempt as u64,
        ]))
    }

    pub fn invoke(&self, request: &ToolRequest) -> ToolResult {
        let start = self.clock.now();
        let elapsed = || self.clock.now().saturating_sub(start);
        let name = request.tool_name.as_str();

        let Some(tool) = self.registered(name) else {
            return ToolResult::error(name, format!("unknown tool '{name}'"), 0, elapsed());
        };
        let spec = &tool.spec;
        if let Err(why) = schema::validate(&spec.parameter_schema, &request.arguments) {
            return ToolResult::error(name, format!("invalid arguments: {why}"), 0, elapsed());
        }
        // The key is recomputed so a client-supplied key cannot alias another request.
        let key = cache_key(name, &request.arguments);
        let ttl = spec.cache_ttl();
        if let Some(payload) = self.cache.get(&key, self.clock.now(), ttl) {
            return ToolResult {
                tool_name: name.to_string(),
                status: Status::Ok,
                payload,
                source: Source::Cache,
                attempts: 0,
                latency_ms: elapsed().as_millis() as u64,
            };
        }

        let mut attempts = 0u32;
        let mut last_failure = String::from("no backend attempted");
        for (k, backend_id) in spec.backend_chain.iter().enumerate() {
            let backend = &self.backends[backend_id];
            for attempt in 1..=spec.retry.max_attempts {
                loop {
                    match self.admit(name, self.clock.now()) {
                        Admission::Granted => break,
                        Admission::Wait(d) => self.clock.sleep(d),
                    }
                }
                attempts += 1;
                let call_start = self.clock.now();
                let ctx = CallContext {
                    clock: self.clock.as_ref(),
                    timeout: spec.timeout(),
                };
                let outcome = catch_unwind(AssertUnwindSafe(|| backend.call(name, &request.arguments, &ctx)))
                    .unwrap_or_else(|_| Err(BackendError::Failed("backend panicked".into())));
                let outcome = match outcome {
                    Ok(_) if self.clock.now().saturating_sub(call_start) > spec.timeout() => {
                        Err(BackendError::Timeout)
                    }
                    Ok(p) if p.is_empty() => Err(BackendError::Failed("empty response".into())),
                    other => other,
                };
                match outcome {
                    Ok(payload) => {
                        let payload = if ttl > Duration::ZERO {
                            self.cache.put(&key, &payload, self.clock.now(), ttl)
                        } else {
                            payload
                        };
                        return ToolResult {
                            tool_name: name.to_string(),
                            status: Status::Ok,
                            payload,
                            source: Source::for_chain_index(k),
                            attempts,
                            latency_ms: elapsed().as_millis() as u64,
                        };
                    }
                    Err(e) => {
                        log::debug!("{name} via {backend_id} attempt {attempt} failed: {e}");
                        last_failure = format!("{backend_id}: {e}");
                        if attempt < spec.retry.max_attempts {
                            let ceiling = spec.retry.backoff_ceiling(attempt);
                            self.clock.sleep(ceiling.mul_f64(self.jitter(request, k, attempt)));
                        }
                    }
                }
            }
        }

        if spec.degradable {
            ToolResult {
                tool_name: name.to_string(),
                status: Status::Degraded,
                payload: degraded_payload(name, &last_failure),
                source: Source::for_chain_index(spec.backend_chain.len() - 1),
                attempts,
                latency_ms: elapsed().as_millis() as u64,
            }
        } else {
            let mut r = ToolResult::error(
                name,
                format!("all backends failed; last: {last_failure}"),
                attempts,
                elapsed(),
            );
            r.source = Source::for_chain_index(spec.backend_chain.len() - 1);
            r
        }
    }
}

impl ToolInvoker for Gateway {
    fn invoke(&self, request: &ToolRequest) -> ToolResult {
        Gateway::invoke(self, request)
    }

    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn spec(name: &str, chain: &[&str]) -> ToolSpec {
        ToolSpec {
            name: name.into(),
            parameter_schema: json!({"type": "object"}),
            backend_chain: chain.iter().map(|s| s.to_string()).collect(),
            qps_limit: 100.0,
            ..ToolSpec::default()
        }
    }

    fn fail() -> Result<String, BackendError> {
        Err(BackendError::Failed("boom".into()))
    }

    #[test]
    fn retries_then_succeeds() {
        let b = Arc::new(ScriptedBackend::new([fail(), fail(), Ok("X".into())]));
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(spec("t", &["a"]))
            .backend("a", b.clone())
            .build()
            .unwrap();
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!((r.status, r.attempts, r.source), (Status::Ok, 3, Source::Primary));
        assert_eq!(r.payload, "X");
    }

    #[test]
    fn fails_over_to_backup() {
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(spec("t", &["a", "b"]))
            .backend("a", Arc::new(ScriptedBackend::new([fail()])))
            .backend("b", Arc::new(ScriptedBackend::new([Ok("X".into())])))
            .build()
            .unwrap();
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!((r.status, r.source, r.attempts), (Status::Ok, Source::Backup(1), 4));
        assert_eq!(r.payload, "X");
        assert_eq!(serde_json::to_value(r.source).unwrap(), "backup_1");
    }

    #[test]
    fn cache_hit_is_identical() {
        let b = Arc::new(ScriptedBackend::new([Ok("first".into()), Ok("second".into())]));
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(spec("t", &["a"]))
            .backend("a", b.clone())
            .build()
            .unwrap();
        let r1 = gw.invoke(&ToolRequest::new("t", json!({"x": 1, "y": 2})));
        let r2 = gw.invoke(&ToolRequest::new("t", json!({"y": 2, "x": 1})));
        assert_eq!(r2.source, Source::Cache);
        assert_eq!(r1.payload, r2.payload);
        assert_eq!(b.calls(), 1);
    }

    #[test]
    fn degrades_or_errors_on_exhaustion() {
        let mut s = spec("t", &["a"]);
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(s.clone())
            .backend("a", Arc::new(ScriptedBackend::new([fail()])))
            .build()
            .unwrap();
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!(r.status, Status::Degraded);
        assert!(r.payload.starts_with("[degraded] The t tool"));
        assert_eq!(r.attempts, 3);
        // Degraded results are not cached.
        assert!(gw.cache().is_empty());

        s.degradable = false;
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(s)
            .backend("a", Arc::new(ScriptedBackend::new([fail()])))
            .build()
            .unwrap();
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!(r.status, Status::Error);
        assert!(render_observation(&r).starts_with("[t error]"));
    }

    #[test]
    fn panics_and_timeouts_stay_in_envelope() {
        let clock = Arc::new(VirtualClock::new());
        let mut s = spec("t", &["a"]);
        s.timeout_ms = 100;
        let slow = {
            let clock = clock.clone();
            move |_: &str, _: &Value| -> Result<String, BackendError> {
                clock.advance(Duration::from_millis(500));
                Ok("late".into())
            }
        };
        let gw = Gateway::builder(clock.clone())
            .tool(s.clone())
            .backend("a", Arc::new(slow))
            .build()
            .unwrap();
        assert_eq!(gw.invoke(&ToolRequest::new("t", json!({}))).status, Status::Degraded);

        let boom = |_: &str, _: &Value| -> Result<String, BackendError> { panic!("kaboom") };
        let gw = Gateway::builder(clock)
            .tool(s)
            .backend("a", Arc::new(boom))
            .build()
            .unwrap();
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!(r.status, Status::Degraded);
        assert!(r.payload.contains("panicked"));
    }

    #[test]
    fn unknown_tool_and_bad_arguments() {
        let mut s = spec("t", &["a"]);
        s.parameter_schema = json!({"type": "object", "required": ["q"]});
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(s)
            .backend("a", Arc::new(ScriptedBackend::new([Ok("x".into())])))
            .build()
            .unwrap();
        assert_eq!(gw.invoke(&ToolRequest::new("nope", json!({}))).status, Status::Error);
        let r = gw.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!(r.status, Status::Error);
        assert!(r.payload.contains("missing required field"));
    }

    #[test]
    fn builder_validates() {
        let clock: Arc<dyn Clock> = Arc::new(VirtualClock::new());
        assert!(matches!(
            Gateway::builder(clock.clone()).tool(spec("t", &["missing"])).build(),
            Err(GatewayError::UnknownBackend(..))
        ));
        assert!(Gateway::builder(clock).tool(spec("t", &[])).build().is_err());
    }
}
