//! Layered run configuration: defaults < file < `RF_` environment < flags.

use std::path::Path;

use robustfield::scenegen::SceneConfig;
use robustfield::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::UsageError;

/// File written next to every command's outputs.
pub const RESOLVED_FILE: &str = "resolved.toml";
/// Environment variables with this prefix override config keys.
pub const ENV_PREFIX: &str = "RF_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.scene.validate().map_err(|e| UsageError(format!("scene: {e}")))?;
        self.train.validate().map_err(|e| UsageError(format!("train: {e}")))
    }
}

/// Accumulates layers as a TOML tree and deserializes once at the end, so
/// unknown keys from any layer are reported by name.
#[derive(Clone, Debug)]
pub struct Layers {
    root: Value,
}

impl Layers {
    pub fn new(base: &RunConfig) -> Self {
        Self {
            root: Value::try_from(base).expect("run config converts to a TOML value"),
        }
    }

    pub fn file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let table: Table = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        merge(&mut self.root, Value::Table(table));
        Ok(())
    }

    /// Applies `RF_SECTION__KEY__SUBKEY=value` pairs; `__` separates path segments.
    pub fn env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), UsageError> {
        let mut vars: Vec<_> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (k, v) in vars {
            let key = k[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            self.set(&key, &v).map_err(|e| UsageError(format!("environment variable {k}: {}", e.0)))?;
        }
        Ok(())
    }

    /// Parses `key=value` as given to `--set`.
    pub fn assignment(&mut self, kv: &str) -> Result<(), UsageError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Sets the dotted `key` to `raw`, read as a TOML value or else as a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), UsageError> {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(UsageError(format!("malformed config key `{key}`")));
        }
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut node = &mut self.root;
        for p in &parts[..parts.len() - 1] {
            let Value::Table(t) = node else {
                return Err(UsageError(format!("config key `{key}`: `{p}` is not a table")));
            };
            node = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        }
        let Value::Table(t) = node else {
            return Err(UsageError(format!("config key `{key}` does not name a table entry")));
        };
        t.insert(parts[parts.len() - 1].to_string(), value);
        Ok(())
    }

    pub fn resolve(self) -> Result<RunConfig, UsageError> {
        let cfg: RunConfig = self.root.try_into().map_err(|e| UsageError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot @ Value::Table(_)) if v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use robustfield::sampling::SamplingStrategy;
    use robustfield::scenegen::SceneMode;

    #[test]
    fn defaults_round_trip() {
        let cfg = Layers::new(&RunConfig::default()).resolve().unwrap();
        assert_eq!(cfg, RunConfig::default());
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn later_layers_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nlr_field = 0.5\niterations = 7\n[train.sampler]\ndilation = 2\n").unwrap();
        let mut l = Layers::new(&RunConfig::default());
        l.file(&path).unwrap();
        l.env([
            ("RF_TRAIN__ITERATIONS".to_string(), "9".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ])
        .unwrap();
        l.assignment("train.sampler.strategy=random").unwrap();
        l.assignment("scene.mode = voxel3d").unwrap();
        let cfg = l.resolve().unwrap();
        assert_eq!(cfg.train.lr_field, 0.5);
        assert_eq!(cfg.train.iterations, 9);
        assert_eq!(cfg.train.sampler.dilation, 2);
        assert_eq!(cfg.train.sampler.patch_size, TrainConfig::default().sampler.patch_size);
        assert_eq!(cfg.train.sampler.strategy, SamplingStrategy::Random);
        assert_eq!(cfg.scene.mode, SceneMode::Voxel3d);
    }

    #[test]
    fn optional_and_list_values() {
        let mut l = Layers::new(&RunConfig::default());
        l.assignment("train.flat_resolution=[32, 16]").unwrap();
        l.assignment("scene.distractor_kinds=[\"disk\"]").unwrap();
        let cfg = l.resolve().unwrap();
        assert_eq!(cfg.train.flat_resolution, Some([32, 16]));
        assert_eq!(cfg.scene.distractor_kinds.len(), 1);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        for bad in ["train.lr_feild=1", "nope.x=1", "train.sampler.patch=3", "train.iterations=0", "train.iterations=abc"] {
            let mut l = Layers::new(&RunConfig::default());
            l.assignment(bad).unwrap();
            assert!(l.resolve().is_err(), "{bad}");
        }
        let mut l = Layers::new(&RunConfig::default());
        assert!(l.assignment("novalue").is_err());
        assert!(l.assignment("train..x=1").is_err());
        assert!(l.assignment("train.iterations.x=1").is_err());
        assert!(l.env([("RF_BOGUS".to_string(), "1".to_string())]).is_ok());
        assert!(l.resolve().is_err());
    }
}
