//! Run configuration as seen by the command line: a training config plus the
//! dataset spec under `data`, read from JSON and patched by dotted-key overrides.

use std::path::Path;

use serde_json::{Map, Value};

use crate::datagen::{generate, Dataset, DatasetSpec};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::trainer::TrainConfig;

const DATA_STREAM: u64 = 0xDA7A;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

impl RunConfig {
    /// Training fields at the top level, the dataset spec under `data`.
    pub fn to_value(&self) -> Value {
        let mut v = serde_json::to_value(&self.train).expect("config serializes");
        v.as_object_mut()
            .expect("config is an object")
            .insert("data".into(), serde_json::to_value(&self.data).expect("spec serializes"));
        v
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let Value::Object(mut map) = v else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let data = map.remove("data").unwrap_or(Value::Object(Map::new()));
        let train: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        let data: DatasetSpec = serde_json::from_value(data).map_err(|e| Error::Config(format!("data: {e}")))?;
        Ok(Self { train, data })
    }

    /// Defaults, overlaid with the JSON file (if any), overlaid with `overrides`.
    /// Nested objects and dotted keys (`"loss.tau"`) are both accepted in the file.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let defaults = Self::default().to_value();
        let mut value = defaults.clone();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let Value::Object(file) = file else {
                return Err(Error::Config(format!("{}: top level must be an object", path.display())));
            };
            for (key, v) in flatten(&file, "") {
                set_dotted(&mut value, &defaults, &key, v)?;
            }
        }
        for (key, v) in overrides {
            set_dotted(&mut value, &defaults, key, v.clone())?;
        }
        Self::from_value(value)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()
    }

    /// Dataset drawn from `data` with a stream derived from the run seed.
    pub fn generate_data(&self) -> Result<Dataset> {
        generate(&self.data, &mut Rng::new(self.train.seed).derive(DATA_STREAM))
    }
}

/// Leaf values of a nested object keyed by dotted path. Arrays and nulls are leaves.
fn flatten(map: &Map<String, Value>, prefix: &str) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    for (k, v) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) if !inner.is_empty() => out.extend(flatten(inner, &key)),
            _ => out.push((key, v.clone())),
        }
    }
    out
}

/// Sets `key` inside `root`. Every segment must exist in `defaults`, except
/// below a field whose default is `null`, where missing objects are created.
fn set_dotted(root: &mut Value, defaults: &Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown key '{key}'"));
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(unknown());
    }
    let mut node = root;
    let mut reference = Some(defaults);
    for (i, seg) in segments.iter().enumerate() {
        // below a null default anything goes; otherwise the key must exist
        let open = reference.is_none_or(Value::is_null);
        if !open && reference.and_then(|r| r.get(*seg)).is_none() {
            return Err(unknown());
        }
        if node.is_null() && open {
            *node = Value::Object(Map::new());
        }
        let Value::Object(map) = node else {
            return Err(unknown());
        };
        let child = map.entry((*seg).to_string()).or_insert(Value::Null);
        if i + 1 == segments.len() {
            *child = value;
            return Ok(());
        }
        reference = if open { None } else { reference.and_then(|r| r.get(*seg)) };
        node = child;
    }
    unreachable!("segments is non-empty")
}

/// Parses a command-line value: JSON when it parses, a plain string otherwise.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Turns `--a.b v --c w` into key/value pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let key = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key value, got '{flag}'")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), parse_override_value(v)));
            continue;
        }
        let raw = it.next().ok_or_else(|| Error::Config(format!("missing value for '--{key}'")))?;
        out.push((key.to_string(), parse_override_value(raw)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::LossVariant;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_value(cfg.to_value()).unwrap(), cfg);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"epochs": 3, "loss": {"tau": 0.2}, "data.n_classes": 5}"#).unwrap();
        let overrides = parse_overrides(&["--epochs".into(), "9".into(), "--loss.variant".into(), "InfoNCE".into()]).unwrap();
        let cfg = RunConfig::load(Some(&path), &overrides).unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.train.loss.tau, 0.2);
        assert_eq!(cfg.train.loss.variant, LossVariant::InfoNCE);
        assert_eq!(cfg.data.n_classes, 5);
    }

    #[test]
    fn unknown_keys_are_named() {
        for key in ["epochz", "loss.temperature", "data.n_classes.x", "loss."] {
            match RunConfig::load(None, &[(key.into(), Value::from(1))]) {
                Err(Error::Config(msg)) => assert!(msg.contains(key), "{msg}"),
                other => panic!("{key}: {other:?}"),
            }
        }
    }

    #[test]
    fn null_defaults_accept_nested_values() {
        let overrides = parse_overrides(&[
            "--architecture.encoder".into(),
            "[64,32,16]".into(),
            "--architecture.projector".into(),
            "[16,16,8]".into(),
            "--architecture.predictor".into(),
            "[8,8,8]".into(),
            "--weak_view=null".into(),
        ])
        .unwrap();
        let cfg = RunConfig::load(None, &overrides).unwrap();
        assert_eq!(cfg.train.architecture.unwrap().encoder, vec![64, 32, 16]);
        assert_eq!(cfg.train.weak_view, None);
    }

    #[test]
    fn missing_file_and_bad_values() {
        assert!(matches!(RunConfig::load(Some(Path::new("/nonexistent/c.json")), &[]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &[("epochs".into(), Value::from("many"))]), Err(Error::Config(_))));
        assert!(parse_overrides(&["epochs".into()]).is_err());
        assert!(parse_overrides(&["--epochs".into()]).is_err());
    }
}
