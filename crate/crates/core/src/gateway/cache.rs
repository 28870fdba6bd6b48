use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use sha2::{Digest, Sha256};

/// Canonical JSON: object keys sorted at every depth, no whitespace.
pub fn canonical_json(value: &Value) -> String {
    fn write(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, k) in keys.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(k.clone()).to_string());
                    out.push(':');
                    write(&map[k], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// `<tool>:<sha256 of canonical arguments>`; the tool-name prefix keeps
/// different tools from ever sharing a key.
pub fn cache_key(tool_name: &str, arguments: &Value) -> String {
    let digest = Sha256::digest(canonical_json(arguments).as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("{tool_name}:{hex}")
}

#[derive(Debug, Default)]
pub struct ResultCache {
    entries: Mutex<HashMap<String, (String, Duration)>>,
}

impl ResultCache {
    pub fn get(&self, key: &str, now: Duration, ttl: Duration) -> Option<String> {
        let entries = self.entries.lock().unwrap();
        let (payload, at) = entries.get(key)?;
        (now.saturating_sub(*at) < ttl).then(|| payload.clone())
    }

    /// Keeps an existing fresh entry so concurrent fills stay byte-identical.
    pub fn put(&self, key: &str, payload: &str, now: Duration, ttl: Duration) -> String {
        let mut entries = self.entries.lock().unwrap();
        if let Some((existing, at)) = entries.get(key) {
            if now.saturating_sub(*at) < ttl {
                return existing.clone();
            }
        }
        entries.insert(key.to_string(), (payload.to_string(), now));
        payload.to_string()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn key_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"query":["a","b"],"k":{"x":1,"y":2}}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"k":{"y":2,"x":1},"query":["a","b"]}"#).unwrap();
        assert_eq!(cache_key("search", &a), cache_key("search", &b));
    }

    #[test]
    fn key_separates_tools_and_values() {
        let a = json!({"query": ["a"]});
        assert_ne!(cache_key("search", &a), cache_key("google_scholar", &a));
        assert_ne!(cache_key("search", &a), cache_key("search", &json!({"query": ["b"]})));
    }

    #[test]
    fn ttl_expiry() {
        let c = ResultCache::default();
        let ttl = Duration::from_secs(10);
        c.put("k", "v", Duration::ZERO, ttl);
        assert_eq!(c.get("k", Duration::from_secs(9), ttl).as_deref(), Some("v"));
        assert_eq!(c.get("k", Duration::from_secs(10), ttl), None);
    }
}
