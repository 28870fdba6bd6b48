use std::sync::Arc;

use serde_json::Value;

use super::SimEnv;
use crate::gateway::{Backend, BackendError, CallContext, Clock, Gateway, GatewayError, ToolSpec, SEARCH, VISIT};

fn string_list(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items.iter().filter_map(|i| i.as_str().map(String::from)).collect(),
        _ => Vec::new(),
    }
}

/// `search` over a [`SimEnv`]. Accepts `query` as a string or list.
#[derive(Debug, Clone)]
pub struct SearchBackend(pub Arc<SimEnv>);

impl Backend for SearchBackend {
    fn call(&self, _: &str, arguments: &Value, _: &CallContext<'_>) -> Result<String, BackendError> {
        let queries = string_list(&arguments["query"]);
        if queries.is_empty() {
            return Err(BackendError::Failed("no query given".into()));
        }
        let blocks: Vec<String> = queries
            .iter()
            .map(|q| {
                let hits = self.0.search(q);
                if hits.is_empty() {
                    return format!("No results found for '{q}'.");
                }
                let mut out = format!("A search for '{q}' found {} results:\n", hits.len());
                for (i, h) in hits.iter().enumerate() {
                    out.push_str(&format!("\n{}. [{}]({})\n{}\n", i + 1, h.title, h.url, h.snippet));
                }
                out
            })
            .collect();
        Ok(blocks.join("\n=======\n"))
    }
}

/// `visit` over a [`SimEnv`]: goal-conditioned extracts per url.
#[derive(Debug, Clone)]
pub struct VisitBackend(pub Arc<SimEnv>);

impl Backend for VisitBackend {
    fn call(&self, _: &str, arguments: &Value, _: &CallContext<'_>) -> Result<String, BackendError> {
        let urls = string_list(&arguments["url"]);
        if urls.is_empty() {
            return Err(BackendError::Failed("no url given".into()));
        }
        let goal = arguments["goal"].as_str().unwrap_or_default();
        let blocks: Vec<String> = urls
            .iter()
            .zip(self.0.visit(&urls, goal))
            .map(|(url, r)| match r {
                Ok(lines) => {
                    let title = self.0.resolve(url).map_or("", |d| d.title.as_str());
                    let mut out = format!("Relevant content from {url} ({title}):\n");
                    for l in lines {
                        out.push_str(&format!("- {l}\n"));
                    }
                    out
                }
                Err(e) => format!("[visit error] {e}\n"),
            })
            .collect();
        Ok(blocks.join("\n=======\n"))
    }
}

/// In-process gateway exposing `search` and `visit` over `env`.
pub fn sim_gateway(env: Arc<SimEnv>, clock: Arc<dyn Clock>) -> Result<Gateway, GatewayError> {
    let spec = |name| ToolSpec::builtin(name).expect("builtin");
    Gateway::builder(clock)
        .tools([spec(SEARCH), spec(VISIT)])
        .backend("sim_search", Arc::new(SearchBackend(env.clone())))
        .backend("sim_visit", Arc::new(VisitBackend(env)))
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::VirtualClock;
    use crate::simenv::Document;
    use serde_json::json;
    use std::time::Duration;

    #[test]
    fn renders_hits_and_extracts() {
        let env = Arc::new(
            SimEnv::new(vec![Document {
                id: "e1".into(),
                title: "Alpha".into(),
                text: "Alpha owns Beta. Its color is red.".into(),
                links: vec![],
            }])
            .unwrap(),
        );
        let clock = VirtualClock::new();
        let ctx = CallContext {
            clock: &clock,
            timeout: Duration::from_secs(1),
        };
        let s = SearchBackend(env.clone())
            .call("search", &json!({"query": ["alpha", "nothing"]}), &ctx)
            .unwrap();
        assert!(s.contains("1. [Alpha](sim://doc/e1)"));
        assert!(s.contains("No results found for 'nothing'."));
        let v = VisitBackend(env)
            .call("visit", &json!({"url": ["sim://doc/e1", "sim://doc/x"], "goal": "color"}), &ctx)
            .unwrap();
        assert!(v.contains("- Its color is red."));
        assert!(v.contains("[visit error] unknown url 'sim://doc/x'"));
    }
}
