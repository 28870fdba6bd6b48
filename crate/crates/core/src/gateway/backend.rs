use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use super::clock::Clock;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Failed(String),
}

/// Per-call context handed to backends.
pub struct CallContext<'a> {
    pub clock: &'a dyn Clock,
    pub timeout: Duration,
}

pub trait Backend: Send + Sync {
    fn call(&self, tool: &str, arguments: &Value, ctx: &CallContext<'_>) -> Result<String, BackendError>;
}

impl<F> Backend for F
where
    F: Fn(&str, &Value) -> Result<String, BackendError> + Send + Sync,
{
    fn call(&self, tool: &str, arguments: &Value, _: &CallContext<'_>) -> Result<String, BackendError> {
        self(tool, arguments)
    }
}

/// Returns queued outcomes in order, then repeats the last one.
pub struct ScriptedBackend {
    outcomes: Mutex<VecDeque<Result<String, BackendError>>>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(outcomes: impl IntoIterator<Item = Result<String, BackendError>>) -> Self {
        ScriptedBackend {
            outcomes: Mutex::new(outcomes.into_iter().collect()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ScriptedBackend {
    fn call(&self, _: &str, _: &Value, _: &CallContext<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut q = self.outcomes.lock().unwrap();
        if q.len() > 1 {
            q.pop_front().unwrap()
        } else {
            q.front().cloned().unwrap_or(Err(BackendError::Failed("no outcome".into())))
        }
    }
}

/// Fault schedule for chaos testing. Rates are independent probabilities
/// checked in order: panic, error, timeout, latency spike.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    pub seed: u64,
    pub panic_rate: f64,
    pub error_rate: f64,
    pub timeout_rate: f64,
    pub spike_rate: f64,
    pub base_latency: Duration,
    pub spike_latency: Duration,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            seed: 0,
            panic_rate: 0.0,
            error_rate: 0.0,
            timeout_rate: 0.0,
            spike_rate: 0.0,
            base_latency: Duration::from_millis(5),
            spike_latency: Duration::from_secs(2),
        }
    }
}

/// Wraps a backend and injects faults and latency on the injected clock.
pub struct FaultInjector<B> {
    inner: B,
    plan: FaultPlan,
    counter: AtomicU64,
}

impl<B: Backend> FaultInjector<B> {
    pub fn new(inner: B, plan: FaultPlan) -> Self {
        FaultInjector {
            inner,
            plan,
            counter: AtomicU64::new(0),
        }
    }
}

impl<B: Backend> Backend for FaultInjector<B> {
    fn call(&self, tool: &str, arguments: &Value, ctx: &CallContext<'_>) -> Result<String, BackendError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let draw = |salt: u64| seeds::unit_interval(seeds::derive(&[self.plan.seed, n, salt]));
        if draw(0) < self.plan.panic_rate {
            panic!("injected backend panic");
        }
        if draw(1) < self.plan.error_rate {
            ctx.clock.sleep(self.plan.base_latency);
            return Err(BackendError::Failed("injected error".into()));
        }
        let latency = if draw(2) < self.plan.timeout_rate {
            ctx.timeout + Duration::from_millis(1)
        } else if draw(3) < self.plan.spike_rate {
            self.plan.spike_latency
        } else {
            self.plan.base_latency
        };
        if latency > ctx.timeout {
            ctx.clock.sleep(ctx.timeout);
            return Err(BackendError::Timeout);
        }
        ctx.clock.sleep(latency);
        self.inner.call(tool, arguments, ctx)
    }
}

/// Canned entries standing in for an external service (scholar, file parser).
#[derive(Debug, Clone, Default)]
pub struct CannedBackend {
    label: String,
    arg_key: String,
    entries: BTreeMap<String, String>,
}

impl CannedBackend {
    pub fn scholar(entries: BTreeMap<String, String>) -> Self {
        CannedBackend {
            label: "scholar".into(),
            arg_key: "query".into(),
            entries,
        }
    }

    pub fn file_parser(entries: BTreeMap<String, String>) -> Self {
        CannedBackend {
            label: "file".into(),
            arg_key: "files".into(),
            entries,
        }
    }
}

impl Backend for CannedBackend {
    fn call(&self, _: &str, arguments: &Value, _: &CallContext<'_>) -> Result<String, BackendError> {
        let keys: Vec<&str> = match &arguments[self.arg_key.as_str()] {
            Value::Array(items) => items.iter().filter_map(Value::as_str).collect(),
            Value::String(s) => vec![s.as_str()],
            _ => Vec::new(),
        };
        let mut out = String::new();
        for key in keys {
            let needle = key.to_lowercase();
            out.push_str(&format!("## {} results for '{key}'\n", self.label));
            let hits: Vec<(&String, &String)> = self
                .entries
                .iter()
                .filter(|(k, v)| {
                    k.to_lowercase().contains(&needle) || v.to_lowercase().contains(&needle)
                })
                .collect();
            if hits.is_empty() {
                out.push_str("No entries found.\n");
            }
            for (k, v) in hits {
                out.push_str(&format!("- {k}: {v}\n"));
            }
        }
        if out.is_empty() {
            return Err(BackendError::Failed(format!("no {} given", self.arg_key)));
        }
        Ok(out)
    }
}
