//! Layered run configuration: config file < environment < flags.
//!
//! Every layer is applied to a JSON value before a single typed
//! deserialisation, so errors name the offending field path whichever
//! layer introduced it.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

pub const ENV_SEED: &str = "HYKEY_SEED";
pub const ENV_THREADS: &str = "HYKEY_THREADS";

/// Parses a JSON or TOML (by extension) config file. The top level must be
/// a table.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let toml = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value: Value = if toml {
        toml::from_str(&text).with_context(|| format!("parsing TOML config {}", path.display()))?
    } else {
        serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config {}", path.display()))?
    };
    if !value.is_object() {
        bail!("{}: the top level must be a table", path.display());
    }
    Ok(value)
}

/// Sets a dot-separated `path` in `root`, creating tables on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let table = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("{path}: `{key}` sits inside a value that is not a table"))?;
        if parts.peek().is_none() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        node = table.entry(key).or_insert(Value::Null);
    }
    Ok(())
}

/// One override: a field path and its value, with the layer it came from
/// for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
    pub source: &'static str,
}

impl Override {
    pub fn flag(path: &str, value: impl Into<Value>) -> Self {
        Self {
            path: path.into(),
            value: value.into(),
            source: "flag",
        }
    }
}

/// Reads `HYKEY_SEED` and `HYKEY_THREADS` through `lookup` and maps them to
/// the given field paths. Commands without a seed pass `None`.
pub fn env_overrides(
    lookup: &dyn Fn(&str) -> Option<String>,
    seed_path: Option<&str>,
    threads_path: &str,
) -> Result<Vec<Override>> {
    let mut out = Vec::new();
    if let (Some(seed_path), Some(v)) = (seed_path, lookup(ENV_SEED)) {
        let seed: u64 = v
            .trim()
            .parse()
            .map_err(|_| anyhow!("{ENV_SEED}: expected an unsigned integer, got {v:?}"))?;
        out.push(Override {
            path: seed_path.into(),
            value: seed.into(),
            source: ENV_SEED,
        });
    }
    if let Some(v) = lookup(ENV_THREADS) {
        let threads: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("{ENV_THREADS}: expected a positive integer, got {v:?}"))?;
        out.push(Override {
            path: threads_path.into(),
            value: threads.into(),
            source: ENV_THREADS,
        });
    }
    Ok(out)
}

/// Applies `layers` in order on top of `base` and deserialises the result.
/// Errors carry the field path.
pub fn resolve<T: DeserializeOwned>(base: Option<Value>, layers: &[Override]) -> Result<T> {
    let mut value = base.unwrap_or_else(|| Value::Object(Map::new()));
    for o in layers {
        set_path(&mut value, &o.path, o.value.clone())
            .with_context(|| format!("applying {}", o.source))?;
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            anyhow!("invalid config: {inner}")
        } else {
            anyhow!("invalid config at `{path}`: {inner}")
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;
    use serde::Deserialize;
    use serde_json::json;

    #[derive(Debug, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Toy {
        seed: u64,
        threads: usize,
        nested: Nested,
    }

    #[derive(Debug, Default, Deserialize, PartialEq)]
    #[serde(default, deny_unknown_fields)]
    struct Nested {
        rate: f64,
    }

    impl Default for Toy {
        fn default() -> Self {
            Self {
                seed: 0,
                threads: 1,
                nested: Nested::default(),
            }
        }
    }

    #[test]
    fn later_layers_win() {
        let file = json!({"seed": 1, "threads": 2, "nested": {"rate": 0.5}});
        let env = |k: &str| match k {
            ENV_SEED => Some("7".to_string()),
            ENV_THREADS => Some("3".to_string()),
            _ => None,
        };
        let mut layers = env_overrides(&env, Some("seed"), "threads").unwrap();
        let t: Toy = resolve(Some(file.clone()), &layers).unwrap();
        assert_eq!((t.seed, t.threads), (7, 3));
        layers.push(Override::flag("seed", 9));
        let t: Toy = resolve(Some(file), &layers).unwrap();
        assert_eq!((t.seed, t.threads, t.nested.rate), (9, 3, 0.5));
    }

    #[test]
    fn nested_override_creates_tables() {
        let t: Toy = resolve(None, &[Override::flag("nested.rate", 2.0)]).unwrap();
        assert_eq!(t.nested.rate, 2.0);
        let mut v = json!({"nested": 3});
        assert!(set_path(&mut v, "nested.rate", json!(1)).is_err());
    }

    #[test]
    fn errors_name_the_field_path() {
        let e =
            resolve::<TrainConfig>(Some(json!({"model": {"channels": "wide"}})), &[]).unwrap_err();
        assert!(e.to_string().contains("model.channels"), "{e}");
        let e = resolve::<TrainConfig>(Some(json!({"weights": {"nope": 1}})), &[]).unwrap_err();
        assert!(e.to_string().contains("weights"), "{e}");
    }

    #[test]
    fn bad_environment_is_reported() {
        let env = |k: &str| (k == ENV_THREADS).then(|| "0".to_string());
        let e = env_overrides(&env, Some("seed"), "threads").unwrap_err();
        assert!(e.to_string().contains(ENV_THREADS));
        let env = |k: &str| (k == ENV_SEED).then(|| "-1".to_string());
        assert!(env_overrides(&env, Some("seed"), "threads").is_err());
    }

    #[test]
    fn toml_and_json_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("c.toml"), dir.path().join("c.json"));
        std::fs::write(&a, "seed = 4\n[nested]\nrate = 0.25\n").unwrap();
        std::fs::write(&b, r#"{"seed": 4, "nested": {"rate": 0.25}}"#).unwrap();
        let ta: Toy = resolve(Some(read_config_file(&a).unwrap()), &[]).unwrap();
        let tb: Toy = resolve(Some(read_config_file(&b).unwrap()), &[]).unwrap();
        assert_eq!(ta, tb);
        std::fs::write(&b, "[1, 2]").unwrap();
        assert!(read_config_file(&b).is_err());
    }
}
