//! Validation for the JSON-schema subset used by tool signatures:
//! `type` (single or list), `properties`, `required`, `items`, `minItems`,
//! `additionalProperties: false`.

use serde_json::Value;

pub fn validate(schema: &Value, value: &Value) -> Result<(), String> {
    check(schema, value, "arguments")
}

fn type_matches(ty: &str, value: &Value) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.as_i64().is_some() || value.as_u64().is_some(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        _ => true,
    }
}

fn check(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    let Some(schema) = schema.as_object() else {
        return Ok(());
    };
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, value),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_matches(t, value)),
            _ => true,
        };
        if !ok {
            return Err(format!("{path}: expected type {ty}"));
        }
    }
    if let Value::Object(map) = value {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    return Err(format!("{path}: missing required field '{key}'"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (key, v) in map {
            match props.and_then(|p| p.get(key)) {
                Some(sub) => check(sub, v, &format!("{path}.{key}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{path}: unexpected field '{key}'"));
                }
                None => {}
            }
        }
    }
    if let Value::Array(items) = value {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{path}: needs at least {min} item(s)"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                check(item_schema, item, &format!("{path}[{i}]"))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn search_schema() {
        let schema = json!({"type": "object", "properties": {"query": {"type": "array", "items": {"type": "string"}, "minItems": 1}}, "required": ["query"]});
        assert!(validate(&schema, &json!({"query": ["a"]})).is_ok());
        assert!(validate(&schema, &json!({"query": []})).is_err());
        assert!(validate(&schema, &json!({"query": [1]})).is_err());
        assert!(validate(&schema, &json!({})).is_err());
        assert!(validate(&schema, &json!({"query": "a"})).is_err());
    }

    #[test]
    fn union_types_and_closed_objects() {
        let schema = json!({"type": "object", "properties": {"url": {"type": ["array", "string"]}}, "additionalProperties": false});
        assert!(validate(&schema, &json!({"url": "x"})).is_ok());
        assert!(validate(&schema, &json!({"url": ["x"]})).is_ok());
        assert!(validate(&schema, &json!({"url": 3})).is_err());
        assert!(validate(&schema, &json!({"other": 3})).is_err());
    }
}
