//! Experiment configuration: TOML (or JSON) files plus `key=value` overrides.
//!
//! Overrides use dotted paths (`model.h1=32`) and win over the file. Values
//! parse as JSON when possible (`decode={"beam":3}`) and fall back to strings.
//! Unknown keys are rejected by the target type.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

fn parse_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        return serde_json::from_str(&text).with_context(|| format!("parsing {} as JSON", path.display()));
    }
    match toml::from_str::<Value>(&text) {
        Ok(v) => Ok(v),
        Err(toml_err) => serde_json::from_str(&text)
            .map_err(|_| toml_err)
            .with_context(|| format!("parsing {} as TOML or JSON", path.display())),
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let Some((key, raw)) = spec.split_once('=') else {
        bail!("override {spec:?} is not key=value");
    };
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = root;
    let path: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in path.iter().enumerate() {
        if part.is_empty() {
            bail!("override {spec:?} has an empty key segment");
        }
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == path.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Loads `T` from an optional file, then applies overrides in order.
pub fn load<T: DeserializeOwned + Serialize + Default>(path: Option<&Path>, overrides: &[String]) -> Result<T> {
    let mut value = match path {
        Some(p) => parse_file(p)?,
        None => serde_json::to_value(T::default())?,
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    serde_json::from_value(value).context("invalid configuration")
}
