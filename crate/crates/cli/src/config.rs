//! JSON config files. A file may name a built-in base (`"profile"` for
//! training, `"preset"` for data) and override any subset of its fields.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use ssctl::data::SyntheticConfig;
use ssctl::train::TrainConfig;
use ssctl::Error;

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn with_base<T: Serialize + DeserializeOwned>(
    mut raw: Map<String, Value>,
    key: &str,
    base: impl FnOnce(&str) -> ssctl::Result<T>,
) -> ssctl::Result<T> {
    let Some(name) = raw.remove(key) else {
        return Ok(serde_json::from_value(Value::Object(raw))?);
    };
    let name = name
        .as_str()
        .ok_or_else(|| Error::config(key, "must be a string"))?
        .to_string();
    let mut value = serde_json::to_value(base(&name)?)?;
    merge(&mut value, Value::Object(raw));
    Ok(serde_json::from_value(value)?)
}

fn read_object(path: &Path) -> Result<Map<String, Value>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text).map_err(Error::from)? {
        Value::Object(m) => Ok(m),
        _ => Err(Error::config("config", "top level must be a JSON object").into()),
    }
}

pub fn train_config(path: &Path) -> Result<TrainConfig> {
    let cfg = with_base(read_object(path)?, "profile", TrainConfig::profile)
        .with_context(|| format!("in {}", path.display()))?;
    cfg.validate()
        .with_context(|| format!("in {}", path.display()))?;
    Ok(cfg)
}

pub fn synthetic_config(path: &Path) -> Result<SyntheticConfig> {
    let preset = |name: &str| match name {
        "six_domain" => Ok(SyntheticConfig::six_domain()),
        "separable" => Ok(SyntheticConfig::separable()),
        other => Err(Error::config(
            "preset",
            format!("unknown preset `{other}` (six_domain, separable)"),
        )),
    };
    let cfg = with_base(read_object(path)?, "preset", preset)
        .with_context(|| format!("in {}", path.display()))?;
    cfg.validate()
        .with_context(|| format!("in {}", path.display()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overlay_replaces_leaves_and_keeps_siblings() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": [1, 2]}});
        merge(&mut base, json!({"b": {"d": [3]}, "e": true}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": [3]}, "e": true}));
    }

    #[test]
    fn profile_overrides() {
        let raw = json!({"profile": "tiny", "lambda": 0.3, "classifier": {"epochs": 1}});
        let Value::Object(m) = raw else {
            unreachable!()
        };
        let cfg = with_base(m, "profile", TrainConfig::profile).unwrap();
        assert_eq!(cfg.lambda, 0.3);
        assert_eq!(cfg.classifier.epochs, 1);
        assert_eq!(cfg.classifier.hidden, TrainConfig::tiny().classifier.hidden);
        assert_eq!(cfg.expert_widths, TrainConfig::tiny().expert_widths);
    }

    #[test]
    fn unknown_fields_rejected() {
        let Value::Object(m) = json!({"profile": "tiny", "lamda": 0.3}) else {
            unreachable!()
        };
        assert!(with_base(m, "profile", TrainConfig::profile).is_err());
    }
}
