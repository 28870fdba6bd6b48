use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::GatewayError;

pub const SEARCH: &str = "search";
pub const VISIT: &str = "visit";
pub const PYTHON: &str = "PythonInterpreter";
pub const SCHOLAR: &str = "google_scholar";
pub const PARSE_FILE: &str = "parse_file";

pub const BUILTIN_TOOLS: [&str; 5] = [SEARCH, VISIT, PYTHON, SCHOLAR, PARSE_FILE];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff_ms: 200,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the jittered backoff after failed attempt `attempt` (1-based).
    pub fn backoff_ceiling(&self, attempt: u32) -> Duration {
        let exp = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.base_backoff_ms as f64 / 1000.0 * exp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameter_schema: Value,
    pub backend_chain: Vec<String>,
    pub qps_limit: f64,
    pub cache_ttl_secs: f64,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
    pub degradable: bool,
}

impl Default for ToolSpec {
    fn default() -> Self {
        ToolSpec {
            name: String::new(),
            description: String::new(),
            parameter_schema: Value::Null,
            backend_chain: Vec::new(),
            qps_limit: 1000.0,
            cache_ttl_secs: 3600.0,
            retry: RetryPolicy::default(),
            timeout_ms: 30_000,
            degradable: true,
        }
    }
}

impl ToolSpec {
    pub fn cache_ttl(&self) -> Duration {
        Duration::from_secs_f64(self.cache_ttl_secs.max(0.0))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |why: &str| Err(GatewayError::InvalidSpec(self.name.clone(), why.to_string()));
        if self.name.is_empty() {
            return bad("empty name");
        }
        if self.backend_chain.is_empty() {
            return bad("backend_chain is empty");
        }
        if self.retry.max_attempts < 1 {
            return bad("retry.max_attempts must be at least 1");
        }
        if !(self.qps_limit > 0.0 && self.qps_limit.is_finite()) {
            return bad("qps_limit must be positive");
        }
        Ok(())
    }

    /// Function signature as listed in the system prompt.
    pub fn signature(&self) -> Value {
        json!({
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": self.parameter_schema,
            }
        })
    }

    /// Built-in signature and default limits for one of [`BUILTIN_TOOLS`],
    /// wired to the default simulated backends.
    pub fn builtin(name: &str) -> Option<ToolSpec> {
        let string_array = |desc: &str| {
            json!({"type": "array", "items": {"type": "string"}, "minItems": 1, "description": desc})
        };
        let (description, schema, backend, degradable) = match name {
            SEARCH => (
                "Search the corpus and return the top-10 results for each query. Accepts multiple queries.",
                json!({"type": "object", "properties": {"query": string_array("The list of search queries.")}, "required": ["query"]}),
                "sim_search",
                true,
            ),
            VISIT => (
                "Visit page(s) and return the passages relevant to the goal.",
                json!({"type": "object", "properties": {
                    "url": {"type": ["array", "string"], "items": {"type": "string"}, "description": "The URL(s) to visit."},
                    "goal": {"type": "string", "description": "The information goal for the visit."}
                }, "required": ["url", "goal"]}),
                "sim_visit",
                true,
            ),
            PYTHON => (
                "Evaluate arithmetic code in a sandbox. Pass empty arguments {} and put the code inside <code></code> tags right after the JSON object; print() what you want to see.",
                json!({"type": "object", "properties": {"code": {"type": "string"}}, "required": []}),
                "python_sandbox",
                false,
            ),
            SCHOLAR => (
                "Search academic publications. Accepts multiple queries.",
                json!({"type": "object", "properties": {"query": string_array("The list of queries.")}, "required": ["query"]}),
                "scholar_stub",
                true,
            ),
            PARSE_FILE => (
                "Parse user-provided local files and return their text.",
                json!({"type": "object", "properties": {"files": string_array("File names to parse.")}, "required": ["files"]}),
                "file_stub",
                true,
            ),
            _ => return None,
        };
        Some(ToolSpec {
            name: name.to_string(),
            description: description.to_string(),
            parameter_schema: schema,
            backend_chain: vec![backend.to_string()],
            degradable,
            ..ToolSpec::default()
        })
    }

    pub fn builtins() -> Vec<ToolSpec> {
        BUILTIN_TOOLS
            .iter()
            .map(|n| ToolSpec::builtin(n).expect("builtin"))
            .collect()
    }
}

/// Gateway config file (TOML). Entries named after a built-in tool inherit
/// its signature and only override what they set.
///
/// ```toml
/// [[tool]]
/// name = "search"
/// backend_chain = ["sim_search", "sim_search_backup"]
/// qps_limit = 10
/// cache_ttl_secs = 600
/// timeout_ms = 5000
/// degradable = true
/// retry = { max_attempts = 3, base_backoff_ms = 200, multiplier = 2.0 }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    #[serde(default, rename = "tool")]
    pub tools: Vec<toml::Table>,
}

impl GatewayConfig {
    pub fn from_toml(text: &str) -> Result<Self, GatewayError> {
        toml::from_str(text).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Resolved tool specs: all built-ins, with configured entries overriding
    /// or extending them.
    pub fn specs(&self) -> Result<Vec<ToolSpec>, GatewayError> {
        let mut specs = ToolSpec::builtins();
        for table in &self.tools {
            let name = table
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| GatewayError::Config("tool entry without name".into()))?;
            let base = ToolSpec::builtin(name).unwrap_or_else(|| ToolSpec {
                name: name.to_string(),
                ..ToolSpec::default()
            });
            let mut merged = toml::Table::try_from(&base)
                .map_err(|e| GatewayError::Config(e.to_string()))?;
            for (k, v) in table {
                merged.insert(k.clone(), v.clone());
            }
            let spec: ToolSpec = toml::Value::Table(merged)
                .try_into()
                .map_err(|e: toml::de::Error| GatewayError::Config(format!("tool '{name}': {e}")))?;
            spec.validate()?;
            match specs.iter_mut().find(|s| s.name == spec.name) {
                Some(slot) => *slot = spec,
                None => specs.push(spec),
            }
        }
        Ok(specs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_valid() {
        for spec in ToolSpec::builtins() {
            spec.validate().unwrap();
            assert_eq!(spec.signature()["function"]["name"], spec.name.as_str());
        }
    }

    #[test]
    fn config_overrides_builtin() {
        let cfg = GatewayConfig::from_toml(
            r#"
            [[tool]]
            name = "search"
            backend_chain = ["a", "b"]
            qps_limit = 10
            retry = { max_attempts = 5 }
            "#,
        )
        .unwrap();
        let specs = cfg.specs().unwrap();
        let s = specs.iter().find(|s| s.name == "search").unwrap();
        assert_eq!(s.backend_chain, ["a", "b"]);
        assert_eq!(s.qps_limit, 10.0);
        assert_eq!(s.retry.max_attempts, 5);
        assert_eq!(s.retry.base_backoff_ms, 200);
        assert_eq!(s.parameter_schema["required"][0], "query");
    }

    #[test]
    fn config_rejects_invalid_specs() {
        let cfg = GatewayConfig::from_toml("[[tool]]\nname = \"x\"\n").unwrap();
        assert!(cfg.specs().is_err());
        let cfg = GatewayConfig::from_toml("[[tool]]\nname = \"search\"\nqps_limit = 0\n").unwrap();
        assert!(cfg.specs().is_err());
        assert!(GatewayConfig::from_toml("[[tool]]\nqps = 1\n").unwrap().specs().is_err());
    }

    #[test]
    fn backoff_schedule() {
        let r = RetryPolicy::default();
        assert_eq!(r.backoff_ceiling(1), Duration::from_millis(200));
        assert_eq!(r.backoff_ceiling(3), Duration::from_millis(800));
    }
}
