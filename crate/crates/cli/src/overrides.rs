//! `key=value` overrides applied to the config document before it is
//! parsed. Keys are dotted paths (`llm.temperature=0.2`); values are read as
//! JSON when they parse and as plain strings otherwise.

use anyhow::{anyhow, bail, Result};
use serde_json::{Map, Value};

pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn apply(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override {assignment:?} is not key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {assignment:?} has an empty key segment");
    }
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut node = doc;
    for part in parts {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        node = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override {key}: {part} is not inside an object"))?
            .entry(part)
            .or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Map::new());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| anyhow!("override {key}: parent is not an object"))?;
    obj.insert(last.to_string(), parse_value(raw));
    Ok(())
}
