//! Run configuration, layered as defaults ← file ← flags ← environment.
//!
//! ```toml
//! run_seed = 1
//! mode = "cm"
//! policy = "builtin:oracle"
//! tools = "sim:corpus.jsonl"
//!
//! [limits]
//! max_tool_calls = 32
//!
//! [limits.sampling]
//! temperature = 0.6
//!
//! [[tool]]
//! name = "search"
//! qps_limit = 20
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Limits, PolicyEndpoint, RolloutMode, TcpPolicyClient};
use crate::curation::RefreshPolicy;
use crate::gateway::{
    CannedBackend, GatewayConfig, GatewayError, RemoteGateway, SandboxBackend, SystemClock, ToolInvoker,
};
use crate::orchestrator::{Locator, OrchestratorError, ENV_POLICY, ENV_TOOLS};
use crate::simenv::{SearchBackend, SimEnv, SimEnvError, VisitBackend};
use crate::synth::SynthConfig;
use crate::trainer::{TemplatePolicy, TrainConfig, N_PARAMS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("no {0} endpoint configured (set `{0}` in the config, pass --{0}, or set {1})")]
    MissingEndpoint(&'static str, &'static str),
    #[error("unknown built-in policy '{0}' (expected oracle, prior or template)")]
    UnknownPolicy(String),
    #[error("policy table: {0}")]
    PolicyTable(String),
    #[error(transparent)]
    Endpoint(#[from] OrchestratorError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    SimEnv(#[from] SimEnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeavyConfig {
    pub n: usize,
    pub answer_cap: usize,
}

impl Default for HeavyConfig {
    fn default() -> Self {
        HeavyConfig { n: 3, answer_cap: crate::orchestrator::ANSWER_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run_seed: u64,
    pub mode: RolloutMode,
    pub concurrency: usize,
    /// Evaluation runs per question (`k`).
    pub runs: usize,
    pub group_size: usize,
    /// Policy locator; empty means unset.
    pub policy: String,
    /// Tool gateway locator; empty means unset.
    pub tools: String,
    /// Logit table for `builtin:template`, as a JSON array.
    pub policy_table: Option<PathBuf>,
    pub endpoint_timeout_ms: u64,
    pub limits: Limits,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub curation: RefreshPolicy,
    pub heavy: HeavyConfig,
    #[serde(rename = "tool")]
    pub tool_overrides: Vec<toml::Table>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            run_seed: 0,
            mode: RolloutMode::React,
            concurrency: 8,
            runs: 3,
            group_size: 8,
            policy: String::new(),
            tools: String::new(),
            policy_table: None,
            endpoint_timeout_ms: 2000,
            limits: Limits::default(),
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            curation: RefreshPolicy::default(),
            heavy: HeavyConfig::default(),
            tool_overrides: Vec::new(),
        }
    }
}

fn merge_tables(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        cur = entry.as_table_mut().expect("table");
    }
    cur.insert(last.to_string(), value);
}

/// Reads a `key=value` override; the value is parsed as TOML and falls back
/// to a plain string.
pub fn parse_override(text: &str) -> Result<(String, toml::Value), ConfigError> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override '{text}' is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl Config {
    /// Builds the effective config. `flags` are dotted-key overrides; `env`
    /// looks up environment variables and wins over everything else.
    pub fn layered(
        file: Option<&Path>,
        flags: &[(String, toml::Value)],
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Config, ConfigError> {
        let mut table = toml::Table::try_from(Config::default()).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(path.to_path_buf(), e))?;
            let doc: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
            merge_tables(&mut table, doc);
        }
        for (k, v) in flags {
            set_dotted(&mut table, k, v.clone());
        }
        for (var, key) in [(ENV_POLICY, "policy"), (ENV_TOOLS, "tools")] {
            if let Some(v) = env(var).filter(|v| !v.is_empty()) {
                table.insert(key.to_string(), toml::Value::String(v));
            }
        }
        let cfg: Config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency == 0 {
            return Err(ConfigError::Parse("concurrency must be positive".into()));
        }
        if self.runs == 0 {
            return Err(ConfigError::Parse("runs must be positive".into()));
        }
        self.limits.sampling.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        self.curation.validate().map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(())
    }

    fn locator(&self, which: &'static str) -> Result<Locator, ConfigError> {
        let (text, var) = match which {
            "policy" => (&self.policy, ENV_POLICY),
            _ => (&self.tools, ENV_TOOLS),
        };
        if text.is_empty() {
            return Err(ConfigError::MissingEndpoint(which, var));
        }
        let loc: Locator = text.parse()?;
        loc.probe(Duration::from_millis(self.endpoint_timeout_ms))?;
        Ok(loc)
    }

    pub fn policy_endpoint(&self) -> Result<Arc<dyn PolicyEndpoint>, ConfigError> {
        match self.locator("policy")? {
            Locator::Tcp(addr) => Ok(Arc::new(TcpPolicyClient::new(addr))),
            Locator::Builtin(name) => Ok(Arc::new(self.builtin_policy(&name)?)),
            loc @ Locator::Sim(_) => Err(ConfigError::Endpoint(OrchestratorError::BadLocator(
                loc.to_string(),
                "sim: locators name tool corpora, not policies".into(),
            ))),
        }
    }

    pub fn builtin_policy(&self, name: &str) -> Result<TemplatePolicy, ConfigError> {
        match name {
            "oracle" => Ok(TemplatePolicy::oracle()),
            "prior" => Ok(TemplatePolicy::prior(self.train.prior_skill, self.train.prior_rush)),
            "template" => {
                let path = self
                    .policy_table
                    .as_ref()
                    .ok_or_else(|| ConfigError::PolicyTable("builtin:template needs policy_table".into()))?;
                load_policy_table(path)
            }
            other => Err(ConfigError::UnknownPolicy(other.to_string())),
        }
    }

    pub fn tool_invoker(&self) -> Result<Arc<dyn ToolInvoker>, ConfigError> {
        match self.locator("tools")? {
            Locator::Tcp(addr) => Ok(Arc::new(RemoteGateway::new(addr))),
            Locator::Sim(path) => {
                let env = Arc::new(SimEnv::load(&path)?);
                let specs = GatewayConfig {
                    tools: self.tool_overrides.clone(),
                }
                .specs()?;
                let gateway = crate::gateway::Gateway::builder(Arc::new(SystemClock::new()))
                    .tools(specs)
                    .backend("sim_search", Arc::new(SearchBackend(env.clone())))
                    .backend("sim_visit", Arc::new(VisitBackend(env)))
                    .backend("python_sandbox", Arc::new(SandboxBackend))
                    .backend("scholar_stub", Arc::new(CannedBackend::scholar(BTreeMap::new())))
                    .backend("file_stub", Arc::new(CannedBackend::file_parser(BTreeMap::new())))
                    .build()?;
                Ok(Arc::new(gateway))
            }
            loc @ Locator::Builtin(_) => Err(ConfigError::Endpoint(OrchestratorError::BadLocator(
                loc.to_string(),
                "tools need tcp:// or sim:".into(),
            ))),
        }
    }
}

pub fn load_policy_table(path: &Path) -> Result<TemplatePolicy, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::PolicyTable(format!("{}: {e}", path.display())))?;
    let table: Vec<f64> = serde_json::from_str(&text).map_err(|e| ConfigError::PolicyTable(e.to_string()))?;
    TemplatePolicy::new(table).map_err(|_| ConfigError::PolicyTable(format!("expected {N_PARAMS} finite values")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_follow_eval_protocol() {
        let c = Config::layered(None, &[], &no_env).unwrap();
        assert_eq!(c.limits.sampling.temperature, 0.85);
        assert_eq!(c.limits.sampling.top_p, 0.95);
        assert_eq!(c.limits.sampling.repetition_penalty, 1.1);
        assert_eq!(c.limits.max_tool_calls, 128);
        assert_eq!(c.limits.context_tokens, 128 * 1024);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "run_seed = 5\npolicy = \"builtin:prior\"\n[limits]\nmax_tool_calls = 9\n").unwrap();
        let flags = vec![parse_override("limits.sampling.temperature=0.5").unwrap(), parse_override("run_seed=6").unwrap()];
        let env = |k: &str| (k == ENV_POLICY).then(|| "builtin:oracle".to_string());
        let c = Config::layered(Some(&path), &flags, &env).unwrap();
        assert_eq!(c.run_seed, 6);
        assert_eq!(c.limits.max_tool_calls, 9);
        assert_eq!(c.limits.context_tokens, 128 * 1024);
        assert_eq!(c.limits.sampling.temperature, 0.5);
        assert_eq!(c.policy, "builtin:oracle");
        assert_eq!(parse_override("mode=cm").unwrap().1, toml::Value::String("cm".into()));
    }

    #[test]
    fn rejections() {
        assert!(matches!(
            Config::layered(Some(Path::new("/nonexistent/x.toml")), &[], &no_env),
            Err(ConfigError::Read(..))
        ));
        let bad = vec![parse_override("bogus=1").unwrap()];
        assert!(matches!(Config::layered(None, &bad, &no_env), Err(ConfigError::Parse(_))));
        let c = Config::layered(None, &[], &no_env).unwrap();
        assert!(matches!(c.policy_endpoint(), Err(ConfigError::MissingEndpoint("policy", _))));
        assert!(matches!(c.builtin_policy("nope"), Err(ConfigError::UnknownPolicy(_))));
    }
}
