//! Run configuration: a preset, overlaid with a TOML file, overlaid with flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stressnet::finetune::Method;
use stressnet::pipeline::{PipelineConfig, Profile};

use crate::CliError;

/// Keys that are legal in a config file but absent from a preset's defaults.
const OPTIONAL_KEYS: &[&str] = &["data", "encoders", "out", "sweep.workers"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    /// Interchange root (one directory per subject); synthetic cohort when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Directory holding encoder artifacts for `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoders: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub data: Option<PathBuf>,
    pub encoders: Option<PathBuf>,
}

impl RunConfig {
    pub fn preset(profile: Profile) -> Self {
        Self {
            profile,
            data: None,
            encoders: None,
            out: None,
            pipeline: PipelineConfig::preset(profile),
        }
    }

    /// Resolves the effective configuration. A missing config file is a usage
    /// error; malformed contents or unknown keys are validation failures.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
                let table: toml::Table = toml::from_str(&text)
                    .map_err(|e| CliError::Failure(format!("config {}: {e}", path.display())))?;
                Some(table)
            }
            None => None,
        };
        let file_profile = match file_table.as_ref().and_then(|t| t.get("profile")) {
            Some(v) => Some(
                v.as_str()
                    .ok_or_else(|| CliError::Failure("config key 'profile' must be a string".into()))?
                    .parse::<Profile>()
                    .map_err(|e| CliError::Failure(e.to_string()))?,
            ),
            None => None,
        };
        let profile = flags.profile.or(file_profile).unwrap_or_default();

        let mut config = Self::preset(profile);
        if let Some(table) = file_table {
            let mut base = toml::Table::try_from(&config).map_err(|e| CliError::Failure(e.to_string()))?;
            merge(&mut base, table, "")?;
            base.insert("profile".into(), toml::Value::String(profile.to_string()));
            config = base.try_into().map_err(|e: toml::de::Error| CliError::Failure(format!("config: {e}")))?;
        }

        if let Some(seed) = flags.seed {
            config.pipeline.sweep.seed = seed;
        }
        if let Some(out) = &flags.out {
            config.out = Some(out.clone());
        }
        if let Some(workers) = flags.workers {
            config.pipeline.sweep.workers = Some(workers);
        }
        if let Some(methods) = &flags.methods {
            config.pipeline.sweep.methods = methods.clone();
        }
        if let Some(data) = &flags.data {
            config.data = Some(data.clone());
        }
        if let Some(encoders) = &flags.encoders {
            config.encoders = Some(encoders.clone());
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (what, path) in [("data", &self.data), ("encoders", &self.encoders)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Usage(format!("{what} path {} does not exist", p.display())));
                }
            }
        }
        if self.pipeline.sweep.seed > i64::MAX as u64 {
            return Err(CliError::Failure(format!("seed must be at most {}", i64::MAX)));
        }
        self.pipeline.validate().map_err(|e| CliError::Failure(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.pipeline.seed()
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Failure(format!("cannot serialize config: {e}")))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("an output directory is required (--out or 'out' in the config)".into()))
    }
}

/// Overlays `over` onto `base`, rejecting keys the schema does not know.
fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) -> Result<(), CliError> {
    for (key, value) in over {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o, &path)?,
            (Some(slot), v) => *slot = v,
            (None, v) if OPTIONAL_KEYS.contains(&path.as_str()) => {
                base.insert(key, v);
            }
            (None, _) => return Err(CliError::Failure(format!("unknown config key '{path}'"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::preset(Profile::Smoke);
        cfg.pipeline.sweep.workers = Some(2);
        cfg.pipeline.sweep.seed = 17;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        let back = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_overrides_preset_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "profile = \"smoke\"\n[sweep]\nseed = 5\nrepeats = 2\n").unwrap();
        let flags = Overrides { seed: Some(9), ..Overrides::default() };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.profile, Profile::Smoke);
        assert_eq!(cfg.pipeline.sweep.repeats, 2);
        assert_eq!(cfg.seed(), 9);
        assert_eq!(cfg.pipeline.sweep.budgets, vec![5]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[sweep]\nrepeatz = 2\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("sweep.repeatz"), "{err}");
    }

    #[test]
    fn missing_config_file_is_a_usage_error() {
        let err = RunConfig::resolve(Some(Path::new("/nonexistent/c.toml")), &Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }
}
